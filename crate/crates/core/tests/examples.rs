//! Every example under `examples/` runs to completion.

macro_rules! example {
    ($module:ident, $file:literal) => {
        #[allow(dead_code)]
        mod $module {
            include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/", $file));
        }

        #[test]
        fn $module() {
            $module::run_example().expect(concat!($file, " should run"));
        }
    };
}

example!(inspect_model, "inspect_model.rs");
example!(gme_input, "gme_input.rs");
example!(segment_image, "segment_image.rs");
example!(cost_report, "cost_report.rs");
example!(latency_bench, "latency_bench.rs");
example!(gradient_check, "gradient_check.rs");
example!(operator_oracles, "operator_oracles.rs");
example!(ablation_grid, "ablation_grid.rs");
example!(weights_roundtrip, "weights_roundtrip.rs");
example!(bottleneck_stages, "bottleneck_stages.rs");
