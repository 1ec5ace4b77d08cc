#![cfg_attr(fuzzing, no_main)]

use squash::squash_store::{decode_record, encode_record};

// The trailer checksum and exact-length rule make accepted input canonical.
fn check(data: &[u8]) {
    if let Ok(record) = decode_record(data) {
        assert_eq!(encode_record(&record), data);
    }
}

#[cfg(fuzzing)]
libfuzzer_sys::fuzz_target!(|data: &[u8]| check(data));

#[cfg(not(fuzzing))]
fn main() {
    squash_fuzz::replay(check);
}
