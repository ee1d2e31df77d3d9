use tetrad_core::encoders::{clip_windows, image_views, sample_music_clips, sample_video_clips, Clip};
use tetrad_core::{pool, ClipEmbeddingSet, Encoder, EncoderConfig, Modality, RawImage, RawMusic, RawVideo};
use tetrad_music::synth::chord_progression;
use tetrad_music::ChordLabel;

const SR: u32 = 8000;

fn chord(name: &str, seconds: f64) -> RawMusic {
    let l: ChordLabel = name.parse().unwrap();
    RawMusic::new(chord_progression(&[l], seconds, 0.2, SR), SR).unwrap()
}

fn gradient_image(h: usize, w: usize, tint: f32) -> RawImage {
    let mut img = RawImage::filled(h, w, [0.0; 3]);
    for y in 0..h {
        for x in 0..w {
            img.set(y, x, [x as f32 / w as f32, y as f32 / h as f32, tint]);
        }
    }
    img
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (norm(a) * norm(b))
}

#[test]
fn uniform_windows() {
    // 10 s at 8 kHz, four 2.5 s windows
    let w = clip_windows(80_000, 4, 16_000).unwrap();
    assert_eq!(w, vec![(0, 20_000), (20_000, 20_000), (40_000, 20_000), (60_000, 20_000)]);
    assert_eq!(clip_windows(80_000, 1, 16_000).unwrap(), vec![(0, 80_000)]);
    // windows wider than the even split are clamped at the end
    let w = clip_windows(48_000, 4, 16_000).unwrap();
    assert_eq!(w, vec![(0, 16_000), (12_000, 16_000), (24_000, 16_000), (32_000, 16_000)]);
    assert!(clip_windows(0, 4, 10).is_err());
    assert!(clip_windows(10, 0, 10).is_err());
}

#[test]
fn short_input_gives_identical_padded_clips() {
    let m = chord("C:maj", 1.0);
    let clips = sample_music_clips(&m, 4, 2.0).unwrap();
    assert_eq!(clips.len(), 4);
    for c in &clips {
        assert_eq!(c.samples.len(), 16_000);
        assert_eq!(&c.samples[..8000], &m.samples[..]);
        assert!(c.samples[8000..].iter().all(|&s| s == 0.0));
        assert_eq!(c, &clips[0]);
    }
}

#[test]
fn music_clip_starts() {
    let m = RawMusic::new((0..80_000).map(|i| (i as f32 * 1e-5).sin()).collect(), SR).unwrap();
    let clips = sample_music_clips(&m, 4, 2.0).unwrap();
    for (i, c) in clips.iter().enumerate() {
        assert_eq!(c.samples[0], m.samples[i * 20_000]);
        assert_eq!(c.samples.len(), 20_000);
    }
}

#[test]
fn video_clips_repeat_the_last_frame() {
    let frames: Vec<RawImage> = (0..3).map(|i| RawImage::filled(8, 8, [i as f32 / 3.0; 3])).collect();
    let v = RawVideo::new(frames.clone(), 2.0).unwrap();
    let clips = sample_video_clips(&v, 2, 2.0).unwrap();
    assert_eq!(clips.len(), 2);
    assert_eq!(clips[0].frames.len(), 4);
    assert_eq!(clips[0].frames[3], frames[2]);
    assert!(RawVideo::new(vec![], 2.0).is_err());
}

#[test]
fn image_views_tile() {
    let img = gradient_image(16, 20, 0.3);
    assert_eq!(image_views(&img, 1).unwrap(), vec![img.clone()]);
    let tiles = image_views(&img, 4).unwrap();
    assert_eq!(tiles.len(), 4);
    assert_eq!((tiles[3].height, tiles[3].width), (8, 10));
    assert_eq!(tiles[3].get(0, 0, 0), img.get(8, 10, 0));
    assert_eq!(image_views(&img, 5).unwrap()[4], img);
    assert!(image_views(&img, 3).is_err());
}

#[test]
fn encodings_are_deterministic_unit_rows() {
    let enc = Encoder::new(EncoderConfig::default()).unwrap();
    let m = chord("A:min", 3.0);
    let a = enc.encode(Clip::Music(&m)).unwrap();
    let b = enc.encode(Clip::Music(&m)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 128);
    assert!((norm(&a) - 1.0).abs() <= 1e-6);
    let img = gradient_image(16, 16, 0.5);
    let e = enc.encode(Clip::Image(&img)).unwrap();
    assert!((norm(&e) - 1.0).abs() <= 1e-6);

    // a different seed is a different projection
    let other = Encoder::new(EncoderConfig { seed: 9, ..EncoderConfig::default() }).unwrap();
    assert_ne!(other.encode(Clip::Music(&m)).unwrap(), a);
}

#[test]
fn distinct_chords_do_not_collide() {
    let enc = Encoder::new(EncoderConfig::default()).unwrap();
    let names: Vec<String> = tetrad_music::chords::triad_vocabulary().iter().map(|c| c.to_string()).collect();
    let embs: Vec<Vec<f64>> = names.iter().map(|n| enc.encode(Clip::Music(&chord(n, 2.0))).unwrap()).collect();
    let mut worst: f64 = -1.0;
    for i in 0..embs.len() {
        for j in i + 1..embs.len() {
            worst = worst.max(cosine(&embs[i], &embs[j]));
        }
    }
    assert!(worst < 0.999, "max cosine {worst}");
}

#[test]
fn silence_and_bad_input() {
    let enc = Encoder::new(EncoderConfig::default()).unwrap();
    let silent = RawMusic::new(vec![0.0; 16_000], SR).unwrap();
    let e = enc.encode(Clip::Music(&silent)).unwrap();
    assert!((norm(&e) - 1.0).abs() <= 1e-6);
    let bad = RawMusic { samples: vec![f32::NAN; 16_000], sample_rate: SR };
    assert!(enc.encode(Clip::Music(&bad)).is_err());
    let mut img = gradient_image(8, 8, 0.1);
    img.pixels[5] = f32::INFINITY;
    assert!(enc.encode(Clip::Image(&img)).is_err());
    assert!(Encoder::new(EncoderConfig { n_image: 3, ..EncoderConfig::default() }).is_err());
}

#[test]
fn sets_have_configured_counts() {
    let enc = Encoder::new(EncoderConfig { n_image: 5, ..EncoderConfig::default() }).unwrap();
    let m = chord("G:maj", 6.0);
    let s = enc.encode_music(&m).unwrap();
    assert_eq!((s.modality, s.count(), s.dim), (Modality::Music, 4, 128));
    let frames: Vec<RawImage> = (0..12).map(|i| gradient_image(16, 16, i as f32 / 12.0)).collect();
    let v = enc.encode_video(&RawVideo::new(frames, 2.0).unwrap()).unwrap();
    assert_eq!(v.count(), 4);
    assert_eq!(enc.encode_image(&gradient_image(16, 16, 0.2)).unwrap().count(), 5);
}

#[test]
fn pooling() {
    let row = vec![0.6, 0.8, 0.0];
    let same = ClipEmbeddingSet::new(Modality::Music, vec![row.clone(); 3]).unwrap();
    let p = pool(&same);
    for (a, b) in p.iter().zip(&row) {
        assert!((a - b).abs() < 1e-15);
    }
    let single = ClipEmbeddingSet::new(Modality::Music, vec![vec![0.3, 0.1, 0.2]]).unwrap();
    assert_eq!(pool(&single), vec![0.3, 0.1, 0.2]);

    let ortho = ClipEmbeddingSet::new(Modality::Image, vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    let p = pool(&ortho);
    assert!((norm(&p) - 1.0).abs() < 1e-15);
    let r = 1.0 / 2f64.sqrt();
    assert!((cosine(&p, &[1.0, 0.0]) - r).abs() < 1e-15);
    assert!((cosine(&p, &[0.0, 1.0]) - r).abs() < 1e-15);

    assert!(ClipEmbeddingSet::new(Modality::Music, vec![]).is_err());
    assert!(ClipEmbeddingSet::new(Modality::Music, vec![vec![f64::NAN]]).is_err());
}

#[test]
fn grid_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let img = gradient_image(9, 12, 0.7);
    let p = dir.path().join("img.grid");
    img.save(&p).unwrap();
    assert_eq!(RawImage::load(&p).unwrap(), img);
    let v = RawVideo::new(vec![img.clone(), gradient_image(9, 12, 0.1)], 4.0).unwrap();
    let p = dir.path().join("vid.grid");
    v.save(&p).unwrap();
    assert_eq!(RawVideo::load(&p).unwrap(), v);
    assert!(RawImage::load(&p).is_err(), "two frames are not an image");
    std::fs::write(&p, b"nonsense").unwrap();
    assert!(RawVideo::load(&p).is_err());
    assert!(RawImage::new(4, 4, vec![0.0; 48]).is_err());
}
