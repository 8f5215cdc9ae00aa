#![no_main]

use libfuzzer_sys::fuzz_target;
use renet_events::pnm::{decode_pnm, encode_pnm};

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = decode_pnm(data) {
        let again = decode_pnm(&encode_pnm(&img)).expect("encoded image decodes");
        assert_eq!(again, img);
    }
});
