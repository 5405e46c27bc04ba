#![no_main]
use chirp_ident::io::result;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(r) = std::str::from_utf8(data).map(result::from_json) {
        if let Ok(r) = r {
            _ = result::to_json(&r);
        }
    }
});
