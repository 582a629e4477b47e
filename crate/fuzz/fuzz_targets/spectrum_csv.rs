#![no_main]

use libfuzzer_sys::fuzz_target;
use qnd_core::csvio::{read_spectrum, write_spectrum};

fuzz_target!(|data: &[u8]| {
    if let Ok((f, s)) = read_spectrum(data) {
        assert_eq!(f.len(), s.len());
        assert!(f.iter().chain(&s).all(|v| v.is_finite()));
        let mut buf = Vec::new();
        write_spectrum(&mut buf, &f, &s).unwrap();
        assert_eq!(read_spectrum(buf.as_slice()).unwrap(), (f, s));
    }
});
