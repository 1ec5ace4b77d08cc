#![cfg_attr(fuzzing, no_main)]

use squash::FcnWeights;

fn check(data: &[u8]) {
    if let Ok(weights) = FcnWeights::decode(data) {
        assert_eq!(weights.encode(), data);
    }
}

#[cfg(fuzzing)]
libfuzzer_sys::fuzz_target!(|data: &[u8]| check(data));

#[cfg(not(fuzzing))]
fn main() {
    squash_fuzz::replay(check);
}
