use super::*;
use crate::serializer::{parse_layout_dump, serialize_default, write_layout_dump};

fn images(s: &Sample) -> Vec<&Image> {
    s.prompt.visual_units()
}

fn lit_cells(img: &Image) -> Vec<(usize, usize, Rgb)> {
    let mut out = Vec::new();
    for row in 0..img.height() / PATCH_SIZE {
        for col in 0..img.width() / PATCH_SIZE {
            let c = img.rgb(col * PATCH_SIZE + 5, row * PATCH_SIZE + 5);
            if c != BLACK {
                out.push((col, row, c));
            }
        }
    }
    out
}

#[test]
fn generators_are_pure() {
    for task in Task::ALL {
        assert_eq!(task.generate(7), task.generate(7));
        assert_ne!(
            (0..20).map(|s| task.generate(s)).collect::<Vec<_>>(),
            (20..40).map(|s| task.generate(s)).collect::<Vec<_>>()
        );
    }
}

#[test]
fn caption_answer_is_painted_color() {
    for seed in 0..500 {
        let s = gen_caption(seed);
        let img = images(&s)[0];
        assert!((32..=128).contains(&img.width()) && (32..=128).contains(&img.height()));
        let lit = lit_cells(img);
        assert_eq!(lit.len(), 1);
        let name = COLORS.iter().find(|(_, c)| *c == lit[0].2).unwrap().0;
        assert_eq!(name, s.answer);
        // The whole square is painted, not just the probe pixel.
        let (col, row, c) = lit[0];
        assert_eq!(img.rgb(col * 32 + 31, row * 32 + 31), c);
        assert_eq!(img.rgb(col * 32, row * 32), c);
    }
}

#[test]
fn caption_labels_are_uniform() {
    let mut counts = [0usize; 4];
    for seed in 0..10_000 {
        let s = gen_caption(seed);
        counts[COLORS.iter().position(|(n, _)| *n == s.answer).unwrap()] += 1;
    }
    for c in counts {
        let f = c as f64 / 10_000.0;
        assert!((f - 0.25).abs() < 0.05 * 0.25, "{counts:?}");
    }
}

#[test]
fn same_diff_label_matches_pixels_and_is_balanced() {
    let mut differ = 0;
    for seed in 0..10_000 {
        let s = gen_same_diff(seed);
        let imgs = images(&s);
        let pixels_differ = imgs[0].pixels() != imgs[1].pixels();
        assert_eq!(pixels_differ, s.answer == "different");
        let (a, b) = (lit_cells(imgs[0]), lit_cells(imgs[1]));
        assert!((2..=4).contains(&a.len()));
        assert_eq!(a.iter().zip(&b).filter(|(x, y)| x != y).count(), usize::from(pixels_differ));
        differ += usize::from(pixels_differ);
    }
    let f = differ as f64 / 10_000.0;
    assert!((f - 0.5).abs() <= 0.02, "{f}");
}

#[test]
fn motion_follows_its_direction() {
    for seed in 0..500 {
        let s = gen_motion(seed);
        let frames = images(&s);
        assert!((4..=8).contains(&frames.len()));
        let (_, (dx, dy)) = DIRECTIONS.iter().find(|(n, _)| *n == s.answer).copied().unwrap();
        for w in s.track.windows(2) {
            assert_eq!((w[1].0 - w[0].0, w[1].1 - w[0].1), (dx, dy));
        }
        if s.answer == "right" {
            assert!(s.track.windows(2).all(|w| w[1].0 > w[0].0));
        }
        // Pixel oracle: each frame shows the wrapped track position.
        for (img, &(x, y)) in frames.iter().zip(&s.track) {
            assert_eq!(lit_cells(img), vec![(x.rem_euclid(3) as usize, y.rem_euclid(3) as usize, [255, 255, 255])]);
        }
        let PromptItem::Video(v) = &s.prompt.items[0] else { panic!("motion prompt starts with a video") };
        assert_eq!(v.timestamps, (0..frames.len()).map(|k| k as f64 * 0.5).collect::<Vec<_>>());
    }
}

#[test]
fn single_frames_carry_no_direction() {
    // Position marginals of a random frame, per direction, are uniform.
    let mut counts = [[0usize; 9]; 4];
    let mut totals = [0usize; 4];
    for seed in 0..10_000u64 {
        let s = gen_motion(seed);
        let d = DIRECTIONS.iter().position(|(n, _)| *n == s.answer).unwrap();
        let k = (splitmix64(seed) % s.track.len() as u64) as usize;
        let (x, y) = s.track[k];
        counts[d][(y.rem_euclid(3) * 3 + x.rem_euclid(3)) as usize] += 1;
        totals[d] += 1;
    }
    for d in 0..4 {
        for c in counts[d] {
            let f = c as f64 / totals[d] as f64;
            assert!((f - 1.0 / 9.0).abs() < 0.03, "direction {d}: {:?}", counts[d]);
        }
    }
}

#[test]
fn mixture_frequencies() {
    let m = Mixture::new([2.0, 4.0, 1.0, 1.0]).unwrap();
    let mut counts = [0usize; 4];
    for i in 0..100_000 {
        counts[Task::ALL.iter().position(|t| *t == m.task(11, i)).unwrap()] += 1;
    }
    for (c, want) in counts.iter().zip([0.25, 0.5, 0.125, 0.125]) {
        assert!((*c as f64 / 1e5 - want).abs() < 0.02, "{counts:?}");
    }
    let a: Vec<Sample> = mixture_stream(3, [2.0, 4.0, 1.0, 1.0]).unwrap().take(20).collect();
    let b: Vec<Sample> = mixture_stream(3, [2.0, 4.0, 1.0, 1.0]).unwrap().take(20).collect();
    assert_eq!(a, b);
}

#[test]
fn zero_weights() {
    let m = Mixture::new([0.0, 1.0, 0.0, 1.0]).unwrap();
    assert!((0..2000).all(|i| matches!(m.task(1, i), Task::Caption | Task::Motion)));
    assert!(matches!(Mixture::new([0.0; 4]), Err(Error::EmptyData)));
    assert!(Mixture::new([1.0, -1.0, 0.0, 0.0]).is_err());
}

#[test]
fn samples_serialize_and_roundtrip_dumps() {
    let m = Mixture::new([1.0; 4]).unwrap();
    for i in 0..200 {
        let s = m.sample(5, i);
        let layout = serialize_default(&s.prompt).unwrap();
        assert!(layout.len() + s.answer.len() < 256, "{} tokens", layout.len());
        let dump = write_layout_dump(&layout);
        assert_eq!(parse_layout_dump(&dump).unwrap(), layout);
    }
}

#[test]
fn sample_directories_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    for task in Task::ALL {
        let s = task.generate(42);
        let d = dir.path().join(task.name());
        write_sample(&d, &s).unwrap();
        let back = read_sample(&d).unwrap();
        assert_eq!((back.task, &back.prompt, &back.answer), (s.task, &s.prompt, &s.answer));
    }
}
