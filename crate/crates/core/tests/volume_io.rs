use voxdn_core::data::{from_bytes, read_volume, to_bytes, write_volume, Volume, CLINICAL_SPACING};
use voxdn_core::CoreError;

fn sample_volume() -> Volume {
    let dims = [3, 4, 5];
    let data: Vec<f32> = (0..60).map(|i| (i as f32) * 0.75 - 7.5).collect();
    let mut vol = Volume::new(dims, CLINICAL_SPACING, data).unwrap();
    vol.set_intensity_scale(12.5).unwrap();
    vol.set_provenance("phantom seed=7 | acquired dose=0.2 seed=3");
    vol
}

#[test]
fn byte_round_trip_is_exact() {
    let vol = sample_volume();
    let bytes = to_bytes(&vol).unwrap();
    let back = from_bytes(&bytes).unwrap();
    assert_eq!(back, vol);
    // serialization itself is deterministic
    assert_eq!(to_bytes(&back).unwrap(), bytes);
}

#[test]
fn file_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vol.pvol");
    let vol = sample_volume();
    write_volume(&vol, &path).unwrap();
    let back = read_volume(&path).unwrap();
    assert_eq!(back, vol);
}

#[test]
fn header_layout_is_fixed() {
    let bytes = to_bytes(&sample_volume()).unwrap();
    assert_eq!(&bytes[0..4], b"PVOL");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 0);
    let header_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let header: serde_json::Value = serde_json::from_slice(&bytes[16..16 + header_len]).unwrap();
    assert_eq!(header["dims"], serde_json::json!([3, 4, 5]));
    assert_eq!(bytes.len(), 16 + header_len + 60 * 4);
    // payload is little-endian f32 in z-major order
    let first = f32::from_le_bytes(bytes[16 + header_len..20 + header_len].try_into().unwrap());
    assert_eq!(first, -7.5);
}

fn expect_format_error(bytes: &[u8], needle: &str) {
    match from_bytes(bytes) {
        Err(CoreError::Format(msg)) => {
            assert!(msg.contains(needle), "message {msg:?} should mention {needle:?}")
        }
        other => panic!("expected format error mentioning {needle:?}, got {other:?}"),
    }
}

#[test]
fn corruption_is_rejected_with_detail() {
    let good = to_bytes(&sample_volume()).unwrap();

    expect_format_error(&good[..10], "too short");

    let mut bad_magic = good.clone();
    bad_magic[0] = b'Q';
    expect_format_error(&bad_magic, "magic");

    let mut bad_version = good.clone();
    bad_version[4..8].copy_from_slice(&2u32.to_le_bytes());
    expect_format_error(&bad_version, "version 2");

    let mut huge_header = good.clone();
    huge_header[12..16].copy_from_slice(&1_000_000u32.to_le_bytes());
    expect_format_error(&huge_header, "truncated header");

    let truncated_payload = &good[..good.len() - 4];
    expect_format_error(truncated_payload, "236 bytes");
    expect_format_error(truncated_payload, "240");

    let mut garbage_header = good.clone();
    garbage_header[16] = b'~';
    expect_format_error(&garbage_header, "header decode");
}

#[test]
fn nonpositive_scale_in_header_is_rejected() {
    let mut vol = sample_volume();
    // bypass the setter by rewriting the serialized header
    vol.set_intensity_scale(1.0).unwrap();
    let bytes = to_bytes(&vol).unwrap();
    let text = String::from_utf8_lossy(&bytes[16..]).into_owned();
    assert!(text.contains("\"intensity_scale\":1.0"));
    let header_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let mut header = bytes[16..16 + header_len].to_vec();
    let patched = String::from_utf8(header.clone())
        .unwrap()
        .replace("\"intensity_scale\":1.0", "\"intensity_scale\":0.0");
    header = patched.into_bytes();
    let mut out = bytes[..12].to_vec();
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&bytes[16 + header_len..]);
    expect_format_error(&out, "intensity scale");
}

#[test]
fn read_errors_name_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.pvol");
    std::fs::write(&path, b"PVOLxxxx").unwrap();
    match read_volume(&path) {
        Err(CoreError::Format(msg)) => assert!(msg.contains("broken.pvol"), "got {msg:?}"),
        other => panic!("expected format error, got {other:?}"),
    }
    match read_volume(&dir.path().join("missing.pvol")) {
        Err(CoreError::Io(_)) => {}
        other => panic!("expected io error, got {other:?}"),
    }
}

#[test]
fn constructor_checks_dims_against_buffer() {
    match Volume::new([2, 3, 4], CLINICAL_SPACING, vec![0.0; 23]) {
        Err(CoreError::Config(msg)) => {
            assert!(msg.contains("23") && msg.contains("24"), "got {msg:?}")
        }
        other => panic!("expected config error, got {other:?}"),
    }
    assert!(Volume::new([0, 3, 4], CLINICAL_SPACING, vec![]).is_err());
}

#[test]
fn slab_copies_the_requested_box() {
    let vol = sample_volume();
    let slab = vol.slab([1, 2, 1], [2, 2, 3]).unwrap();
    let mut expect = Vec::new();
    for z in 1..3 {
        for y in 2..4 {
            for x in 1..4 {
                expect.push(vol.at(z, y, x));
            }
        }
    }
    assert_eq!(slab, expect);
    assert!(vol.slab([2, 2, 1], [2, 2, 3]).is_err());
}
