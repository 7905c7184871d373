#![no_main]

use fastweights::datasets::{decode, encode_dataset, parse_csv, parse_csv_labeled, FwkvFile};
use libfuzzer_sys::fuzz_target;

// First byte: bit 7 selects label mode, bits 0-2 give d_x - 1, bits 3-5 give
// d_y - 1. The rest is the CSV text.
fuzz_target!(|data: &[u8]| {
    let Some((&shape, text)) = data.split_first() else {
        return;
    };
    let d_x = (shape & 0x07) as usize + 1;
    let d_y = ((shape >> 3) & 0x07) as usize + 1;
    let parsed = if shape & 0x80 != 0 {
        parse_csv_labeled(text, d_x, "fuzz")
    } else {
        parse_csv(text, d_x, d_y, "fuzz")
    };
    let Ok(ds) = parsed else {
        return;
    };
    assert_eq!(ds.d_x(), d_x);
    let bytes = encode_dataset(&ds).expect("parsed datasets encode");
    match decode(&bytes).expect("encoded dataset decodes") {
        FwkvFile::Dataset(back) => {
            assert_eq!(back.keys(), ds.keys());
            assert_eq!(back.targets(), ds.targets());
        }
        FwkvFile::Weights(_) => panic!("dataset decoded as weights"),
    }
});
