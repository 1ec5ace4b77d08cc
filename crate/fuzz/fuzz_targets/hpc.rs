#![cfg_attr(fuzzing, no_main)]

use squash::cloud::{decode_hpc, encode_hpc};

// Decoding is strict, so anything accepted must re-encode to the input.
fn check(data: &[u8]) {
    if let Ok(cloud) = decode_hpc(data) {
        assert_eq!(encode_hpc(&cloud), data);
    }
}

#[cfg(fuzzing)]
libfuzzer_sys::fuzz_target!(|data: &[u8]| check(data));

#[cfg(not(fuzzing))]
fn main() {
    squash_fuzz::replay(check);
}
