#![no_main]
use chirp_ident::io::pulse;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(p) = pulse::from_text(text) {
        let back = pulse::from_text(&pulse::to_text(&p)).expect("re-encoded pulse parses");
        assert_eq!(back.samples.len(), p.samples.len());
    }
});
