#![cfg_attr(fuzzing, no_main)]

use squash::QueryKernel;

fn check(data: &[u8]) {
    if let Ok(kernel) = QueryKernel::decode(data) {
        assert_eq!(kernel.encode(), data);
    }
}

#[cfg(fuzzing)]
libfuzzer_sys::fuzz_target!(|data: &[u8]| check(data));

#[cfg(not(fuzzing))]
fn main() {
    squash_fuzz::replay(check);
}
