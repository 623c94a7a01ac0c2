#![no_main]

use diffrec::corpus::read_raw;
use diffrec::{DataFormat, RatingDataset, RatingScale};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(rows) = read_raw(data, DataFormat::Ml100kTsv) {
        let _ = RatingDataset::from_raw(&rows, RatingScale::STARS);
    }
});
