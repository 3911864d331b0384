use denseformer::backbone::Mode;
use harness::mvol::{Dtype, Volume};
use harness::synth::synth_dataset;
use harness::HarnessError;

fn sample() -> (Volume, Volume) {
    let case = synth_dataset(1, Mode::Volumetric, &[16, 16, 32], 3, 1).unwrap().remove(0);
    let spacing = [1.5, 0.8, 0.8];
    (Volume::image(&case.image, &spacing).unwrap(), Volume::mask(&case.mask, &spacing).unwrap())
}

#[test]
fn write_read_write_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (image, mask) = sample();
    for (name, vol) in [("i.mvol", &image), ("m.mvol", &mask)] {
        let path = dir.path().join(name);
        vol.write(&path).unwrap();
        let first = std::fs::read(&path).unwrap();
        let back = Volume::read(&path).unwrap();
        assert_eq!(&back, vol);
        back.write(&path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first);
    }
    assert_eq!(image.header.dtype, Dtype::F32);
    assert_eq!(mask.header.dtype, Dtype::U8);
}

#[test]
fn payload_length_follows_the_header() {
    let (image, mask) = sample();
    let header_len = |b: &[u8]| b.iter().position(|&c| c == b'\n').unwrap() + 1;
    let bytes = image.to_bytes();
    assert_eq!(bytes.len() - header_len(&bytes), 16 * 16 * 32 * 3 * 4);
    let bytes = mask.to_bytes();
    assert_eq!(bytes.len() - header_len(&bytes), 16 * 16 * 32);
}

#[test]
fn tensors_survive_the_round_trip() {
    let case = synth_dataset(1, Mode::Planar, &[32, 16], 2, 3).unwrap().remove(0);
    let vol = Volume::from_bytes(&Volume::image(&case.image, &[1.0, 1.0]).unwrap().to_bytes()).unwrap();
    assert_eq!(vol.to_image().unwrap(), case.image);
    let vol = Volume::from_bytes(&Volume::mask(&case.mask, &[1.0, 1.0]).unwrap().to_bytes()).unwrap();
    assert_eq!(vol.to_mask().unwrap(), case.mask);
    assert!(vol.to_image().is_err());
}

fn rejected(bytes: &[u8]) -> bool {
    matches!(Volume::from_bytes(bytes), Err(HarnessError::Format(_)))
}

#[test]
fn corrupted_files_are_rejected() {
    let (image, mask) = sample();
    let good = image.to_bytes();
    assert!(!rejected(&good));

    assert!(rejected(&good[..good.len() - 1]));
    let mut long = good.clone();
    long.push(0);
    assert!(rejected(&long));

    let text = String::from_utf8_lossy(&good[..good.iter().position(|&c| c == b'\n').unwrap()]).to_string();
    let payload = &good[text.len() + 1..];
    let with_header = |h: &str| {
        let mut b = h.as_bytes().to_vec();
        b.push(b'\n');
        b.extend_from_slice(payload);
        b
    };
    assert!(rejected(&with_header(&text.replace("[16,16,32]", "[16,16,33]"))));
    assert!(rejected(&with_header(&text.replace("\"modalities\":3", "\"modalities\":2"))));
    assert!(rejected(&with_header(&text.replace("MVOL1", "MVOL2"))));
    assert!(rejected(&with_header(&text.replace("{", "{ "))));
    assert!(rejected(&with_header(&text.replace("}", ",\"extra\":1}"))));
    assert!(rejected(&with_header(&text.replace("\"f32\"", "\"f64\""))));
    assert!(rejected(&with_header(&text.replace("[1.5,0.8,0.8]", "[1.5,0.8]"))));
    assert!(rejected(b"MVOL1 {\"dims\":[4]"));
    assert!(rejected(b""));

    let mut bad_mask = mask.to_bytes();
    *bad_mask.last_mut().unwrap() = 2;
    assert!(Volume::from_bytes(&bad_mask).unwrap().to_mask().is_err());
}

#[test]
fn missing_file_is_an_io_error() {
    let err = Volume::read(std::path::Path::new("/nonexistent/x.mvol")).unwrap_err();
    assert!(matches!(err, HarnessError::Io { .. }));
}
