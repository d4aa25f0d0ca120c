#![no_main]

use bandcast_cli::data::{ingest_reader, Quarter, SeriesSpec, Transformation};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let specs = [
        SeriesSpec {
            name: "Alpha".into(),
            mnemonic: "ALPHA".into(),
            transformation: Transformation::Level,
        },
        SeriesSpec {
            name: "Beta".into(),
            mnemonic: "BETA".into(),
            transformation: Transformation::HundredLog,
        },
    ];
    let start = Quarter::new(2000, 1).unwrap();
    let end = Quarter::new(2002, 4).unwrap();
    let _ = ingest_reader(data, &specs, start, end);
});
