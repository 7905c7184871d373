#![no_main]

use fastweights::datasets::{decode, encode_dataset, encode_weights, FwkvFile};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(file) = decode(data) else {
        return;
    };
    let bytes = match &file {
        FwkvFile::Dataset(ds) => encode_dataset(ds),
        FwkvFile::Weights(w) => encode_weights(w),
    }
    .expect("decoded files re-encode");
    assert_eq!(decode(&bytes).expect("re-encoded file decodes"), file);
});
