#![no_main]

use libfuzzer_sys::fuzz_target;
use qnd_core::interface::AtomicConstants;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(c) = AtomicConstants::from_toml_str(text) {
            assert!(c.gamma > 0.0 && c.wavelength > 0.0 && c.f >= 1);
            assert!(c.check_prefactor().is_ok());
        }
    }
});
