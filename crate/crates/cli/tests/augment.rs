use denseformer::metrics::BinaryMask;
use denseformer::params::seeded_rng;
use denseformer::Tensor;
use harness::augment::Transform;
use harness::config::AugmentConfig;

/// Image whose first channel encodes each voxel's mask bit, so alignment
/// can be read back after any permutation.
fn tagged(extents: &[usize], seed: u64) -> (Tensor<f32>, BinaryMask) {
    let voxels: usize = extents.iter().product();
    let mask = BinaryMask::from_fn(extents, |i| (i.iter().sum::<usize>() * 7 + seed as usize) % 5 == 0);
    let mut data: Vec<f32> = mask.data().iter().map(|&m| f32::from(m)).collect();
    data.extend((0..voxels).map(|v| v as f32));
    let mut shape = vec![2];
    shape.extend_from_slice(extents);
    (Tensor::new(&shape, data).unwrap(), mask)
}

#[test]
fn random_transforms_keep_masks_binary_and_aligned() {
    let mut rng = seeded_rng(3);
    let cfg = AugmentConfig::default();
    for extents in [vec![4, 6, 6], vec![4, 5, 6], vec![6, 6], vec![4, 8]] {
        let (image, mask) = tagged(&extents, 1);
        let voxels = mask.data().len();
        for _ in 0..20 {
            let t = Transform::draw(&mut rng, &extents, &cfg);
            let (img, m) = t.apply(&image, &mask).unwrap();
            assert_eq!(m.shape(), mask.shape());
            assert_eq!(m.count(), mask.count());
            assert!(m.data().iter().all(|&v| v <= 1));
            for v in 0..voxels {
                assert_eq!(img.data()[v], f32::from(m.data()[v]));
            }
            let mut positions: Vec<u32> = img.data()[voxels..].iter().map(|&x| x as u32).collect();
            positions.sort();
            assert!(positions.iter().enumerate().all(|(i, &p)| p as usize == i));
        }
    }
}

#[test]
fn identity_and_disabled_augmentation_change_nothing() {
    let (image, mask) = tagged(&[4, 6, 6], 2);
    let (img, m) = Transform::identity(3).apply(&image, &mask).unwrap();
    assert_eq!((img, m), (image.clone(), mask.clone()));
    let mut rng = seeded_rng(0);
    let off = AugmentConfig { flip: false, rotate: false };
    for _ in 0..10 {
        assert_eq!(Transform::draw(&mut rng, &[4, 6, 6], &off), Transform::identity(3));
    }
}

#[test]
fn quarter_turn_moves_corners_as_expected() {
    let mask = BinaryMask::from_fn(&[3, 3], |i| i == [0, 2]);
    let image = Tensor::new(&[1, 3, 3], mask.data().iter().map(|&m| f32::from(m)).collect()).unwrap();
    let t = Transform { flips: vec![false, false], quarter_turns: 1 };
    let (_, turned) = t.apply(&image, &mask).unwrap();
    let four = Transform { flips: vec![false, false], quarter_turns: 4 };
    assert_eq!(four.apply(&image, &mask).unwrap().1, mask);
    let mut current = mask.clone();
    for _ in 0..4 {
        current = t.apply(&image, &current).unwrap().1;
    }
    assert_eq!(current, mask);
    assert_eq!(turned.count(), 1);
    assert_ne!(turned, mask);
    let flip = Transform { flips: vec![true, false], quarter_turns: 0 };
    assert_eq!(flip.apply(&image, &mask).unwrap().1, BinaryMask::from_fn(&[3, 3], |i| i == [2, 2]));
}

#[test]
fn odd_turns_need_square_planes() {
    let (image, mask) = tagged(&[4, 8], 0);
    assert!(Transform { flips: vec![false; 2], quarter_turns: 1 }.apply(&image, &mask).is_err());
    assert!(Transform { flips: vec![false; 2], quarter_turns: 2 }.apply(&image, &mask).is_ok());
    let mut rng = seeded_rng(9);
    for _ in 0..50 {
        assert_eq!(Transform::draw(&mut rng, &[4, 8], &AugmentConfig::default()).quarter_turns % 2, 0);
    }
}
