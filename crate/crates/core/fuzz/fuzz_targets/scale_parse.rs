#![no_main]

use diffrec::RatingScale;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(scale) = text.parse::<RatingScale>() {
        assert!(scale.min < scale.max);
        assert!(scale.step > 0.0);
        assert!(scale.contains(scale.min));
    }
});
