//! Bag-of-visual-words scene classifier on simple textures.

use image::{Rgb, RgbImage};
use volsal::scene_classify::{accuracy, train_on_images, SceneModel};

fn texture(kind: usize, phase: u32) -> RgbImage {
    RgbImage::from_fn(64, 48, |x, y| {
        let on = match kind {
            0 => (y + phase) / 4 % 2 == 0,
            1 => (x + phase) / 4 % 2 == 0,
            _ => ((x + phase) / 6 + y / 6) % 2 == 0,
        };
        if on {
            Rgb([220, 210, 200])
        } else {
            Rgb([40, 50, 60])
        }
    })
}

fn classes() -> Vec<String> {
    ["stripes", "bars", "checks"].iter().map(|s| s.to_string()).collect()
}

#[test]
fn distinct_textures_are_separated() {
    // patches are not shift invariant: train on even phases, test on the odd ones between
    let train: Vec<RgbImage> = (0..3).flat_map(|k| (0..12).step_by(2).map(move |p| texture(k, p))).collect();
    let labels: Vec<usize> = (0..3).flat_map(|k| [k; 6]).collect();
    let refs: Vec<&RgbImage> = train.iter().collect();
    let model = train_on_images(&refs, &labels, &classes(), 24, 1).unwrap();
    let test: Vec<usize> = (0..3).flat_map(|k| (1..12).step_by(2).map(move |p| (k, p))).map(|(k, p)| model.predict(&texture(k, p)).unwrap()).collect();
    let truth: Vec<usize> = (0..3).flat_map(|k| [k; 6]).collect();
    assert_eq!(accuracy(&test, &truth), 1.0, "{test:?}");
}

#[test]
fn model_round_trips_and_is_deterministic() {
    let train: Vec<RgbImage> = (0..3).flat_map(|k| (0..2).map(move |p| texture(k, p))).collect();
    let labels: Vec<usize> = (0..3).flat_map(|k| [k; 2]).collect();
    let refs: Vec<&RgbImage> = train.iter().collect();
    let a = train_on_images(&refs, &labels, &classes(), 8, 3).unwrap();
    let b = train_on_images(&refs, &labels, &classes(), 8, 3).unwrap();
    assert_eq!(a.to_bytes(), b.to_bytes());
    let back = SceneModel::from_bytes(&a.to_bytes()).unwrap();
    for img in &train {
        assert_eq!(back.predict(img).unwrap(), a.predict(img).unwrap());
    }
}

#[test]
fn label_count_must_match() {
    let img = texture(0, 0);
    assert!(train_on_images(&[&img, &img], &[0], &classes(), 4, 0).is_err());
}
