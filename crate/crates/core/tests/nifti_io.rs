use gradseg_core::grid::Geometry;
use gradseg_core::nifti::{
    decode_volume, encode_volume, gzip_bytes, parse_header, read_mask, read_volume, write_mask,
    write_volume, Datatype, Endian, NiftiError,
};
use gradseg_core::{LabelMask3, Volume3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_values(rng: &mut ChaCha8Rng, g: &Geometry, dtype: Datatype) -> Volume3 {
    Volume3::from_fn(g.clone(), |_, _, _| match dtype {
        Datatype::Uint8 => rng.random_range(0..=255u8) as f64,
        Datatype::Int16 => rng.random_range(i16::MIN..=i16::MAX) as f64,
        Datatype::Int32 => rng.random_range(i32::MIN..=i32::MAX) as f64,
        Datatype::Float32 => rng.random_range(-1e6f32..1e6) as f64,
        Datatype::Float64 => rng.random_range(-1e12..1e12),
    })
}

#[test]
fn randomized_round_trips_all_variants() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let dir = tempfile::tempdir().unwrap();
    for n in 0..40 {
        let dtype = Datatype::ALL[n % 5];
        let shape = [
            rng.random_range(1..12),
            rng.random_range(1..12),
            rng.random_range(1..8),
        ];
        let spacing = [
            rng.random_range(0.2..3.0),
            rng.random_range(0.2..3.0),
            rng.random_range(0.5..5.0),
        ];
        let g = Geometry::new(shape, spacing).unwrap();
        let v = random_values(&mut rng, &g, dtype);
        let endian = if n % 2 == 0 {
            Endian::Little
        } else {
            Endian::Big
        };
        let raw = encode_volume(&v, dtype, endian).unwrap();
        let bytes = if n % 3 == 0 {
            gzip_bytes(&raw).unwrap()
        } else {
            raw
        };
        let (back, h) = decode_volume(&bytes).unwrap();
        assert_eq!(h.endian, endian);
        assert_eq!(back.data(), v.data(), "case {n} {dtype:?}");
        assert_eq!(back.shape(), shape);
        let sp32 = spacing.map(|s| s as f32 as f64);
        for a in 0..3 {
            assert!((back.spacing()[a] - sp32[a]).abs() <= 1e-6 * sp32[a]);
        }

        let path = dir.path().join(format!("v{n}.nii.gz"));
        write_volume(&v, &path, dtype).unwrap();
        assert_eq!(read_volume(&path).unwrap().0.data(), v.data());
    }
}

#[test]
fn masks_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let g = Geometry::new([7, 5, 3], [0.5, 0.5, 1.2]).unwrap();
    let m = LabelMask3::from_fn(g, |i, j, k| ((i + 2 * j + 3 * k) % 3) as u8);
    for name in ["m.nii", "m.nii.gz"] {
        let p = dir.path().join(name);
        write_mask(&m, &p).unwrap();
        let (back, h) = read_mask(&p).unwrap();
        assert_eq!(back, m);
        assert_eq!(h.datatype, Datatype::Uint8);
        assert_eq!(back.spacing(), [0.5, 0.5, 1.2]);
    }
}

#[test]
fn integer_datatypes_reject_unrepresentable_values() {
    let g = Geometry::new([2, 1, 1], [1.0; 3]).unwrap();
    let frac = Volume3::from_vec(g.clone(), vec![0.5, 1.0]).unwrap();
    assert!(matches!(
        encode_volume(&frac, Datatype::Int16, Endian::Little),
        Err(NiftiError::ValueOverflow(_))
    ));
    let big = Volume3::from_vec(g, vec![256.0, 1.0]).unwrap();
    assert!(encode_volume(&big, Datatype::Uint8, Endian::Little).is_err());
}

#[test]
fn corrupt_inputs_are_named() {
    let g = Geometry::new([3, 3, 3], [1.0; 3]).unwrap();
    let v = Volume3::filled(g, 2.0);
    let good = encode_volume(&v, Datatype::Int16, Endian::Little).unwrap();

    let mut bad_size = good.clone();
    bad_size[0..4].copy_from_slice(&100i32.to_le_bytes());
    assert!(parse_header(&bad_size[..348]).is_err());

    let mut detached = good.clone();
    detached[344..348].copy_from_slice(b"ni1\0");
    assert!(matches!(
        parse_header(&detached[..348]),
        Err(NiftiError::WrongMagic { .. })
    ));

    let mut dtype = good.clone();
    dtype[70..72].copy_from_slice(&128i16.to_le_bytes());
    assert!(matches!(
        decode_volume(&dtype),
        Err(NiftiError::UnsupportedDatatype(128))
    ));

    let short = &good[..good.len() - 5];
    assert!(matches!(
        decode_volume(short),
        Err(NiftiError::DataTruncated { .. })
    ));

    assert!(parse_header(&good[..100]).is_err());
}
