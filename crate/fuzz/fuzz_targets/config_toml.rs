#![no_main]
use chirp_ident::io::config;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = config::parse_config(text) {
        let _ = cfg.validate();
        if let Ok(out) = config::to_toml(&cfg) {
            let _ = config::parse_config(&out);
        }
    }
});
