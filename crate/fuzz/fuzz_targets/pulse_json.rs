#![no_main]
use chirp_ident::io::pulse;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = std::str::from_utf8(data).map(pulse::from_json);
});
