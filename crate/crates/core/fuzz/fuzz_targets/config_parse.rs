#![no_main]

use diffrec::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(cfg) = ExperimentConfig::parse(text) {
        let again = ExperimentConfig::parse(&cfg.render()).expect("rendered config parses");
        assert_eq!(again.render(), cfg.render());
    }
});
