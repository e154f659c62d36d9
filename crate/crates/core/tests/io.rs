use std::fs;

use dosmct::geometry::{FanBeamGeometry, Image, ImageGrid, Sinogram};
use dosmct::io::{read_image, read_sinogram, write_image, write_pgm, write_sinogram};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn image_round_trip_is_bit_exact(vals in prop::collection::vec(-1e6f32..1e6f32, 12)) {
        let dir = tempfile::tempdir().unwrap();
        let grid = ImageGrid::new(4, 3, 0.7).unwrap();
        let img = Image::from_vec(grid, vals.clone()).unwrap();
        write_image(&dir.path().join("a"), &img, None).unwrap();
        let back: Image<f32> = read_image(&dir.path().join("a.f32raw")).unwrap();
        prop_assert_eq!(back.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                        vals.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        prop_assert_eq!(back.grid, grid);
    }
}

#[test]
fn sinogram_round_trip_and_checksum() {
    let dir = tempfile::tempdir().unwrap();
    let geom = FanBeamGeometry::clinical_fan(5, 3);
    let vals: Vec<f32> = (0..15).map(|i| i as f32 * 0.25 - 1.0).collect();
    let s = Sinogram::from_vec(geom, vals).unwrap();
    let p = dir.path().join("s");
    write_sinogram(&p, &s, Some([0.0, 1.0])).unwrap();
    let back: Sinogram<f32> = read_sinogram(&p).unwrap();
    assert_eq!(back, s);

    // flip one payload bit
    let raw = p.with_extension("f32raw");
    let mut bytes = fs::read(&raw).unwrap();
    bytes[0] ^= 1;
    fs::write(&raw, bytes).unwrap();
    assert!(read_sinogram::<f32>(&p).is_err());
}

#[test]
fn reading_wrong_kind_fails() {
    let dir = tempfile::tempdir().unwrap();
    let grid = ImageGrid::square(2, 1.0).unwrap();
    write_image(&dir.path().join("i"), &Image::<f64>::zeros(grid), None).unwrap();
    assert!(read_sinogram::<f64>(&dir.path().join("i")).is_err());
}

#[test]
fn pgm_header_and_clipping() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.pgm");
    write_pgm(&p, &[-1.0f64, 0.0, 0.5, 2.0], 2, 2, [0.0, 1.0]).unwrap();
    let bytes = fs::read(&p).unwrap();
    assert!(bytes.starts_with(b"P5\n2 2\n255\n"));
    assert_eq!(&bytes[bytes.len() - 4..], &[0, 0, 128, 255]);
}
