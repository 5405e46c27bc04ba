#![no_main]
use chirp_ident::io::sweep;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(table) = sweep::from_csv(text) {
        _ = sweep::to_csv(&table);
    }
});
