mod common;

use std::fs;

use fetomo::io;
use fetomo::Error;

#[test]
fn golden_files_round_trip() {
    common::golden::check_all().unwrap();
}

#[test]
fn written_files_reread_identically() {
    let dir = tempfile::tempdir().unwrap();
    let s = common::golden::golden_spectrogram();
    let path = dir.path().join("s.json");
    io::write_spectrogram(&path, &s).unwrap();
    assert_eq!(io::read_spectrogram(&path).unwrap(), s);

    let header = dir.path().join("c.json");
    let chain = common::golden::golden_chain();
    io::write_chain(&header, &chain, fetomo::EnergyWindow::new(0, 0).unwrap()).unwrap();
    assert_eq!(
        fs::read(io::chain_payload_path(&header)).unwrap(),
        fs::read(common::golden::golden_dir().join("chain.bin")).unwrap()
    );
}

#[test]
fn truncated_golden_payload_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let golden = common::golden::golden_dir();
    let header = dir.path().join("chain.json");
    fs::copy(golden.join("chain.json"), &header).unwrap();
    let bytes = fs::read(golden.join("chain.bin")).unwrap();
    fs::write(io::chain_payload_path(&header), &bytes[..40]).unwrap();
    assert!(matches!(
        io::read_chain(&header),
        Err(Error::LengthMismatch { expected: 48, found: 40 })
    ));
}
