use fsnet_core::events::{
    decode_evt1, encode_evt1, generate_scene, load_events, parse_csv, save_events, write_csv, Event, EventFormat,
    EventStream, LoadOptions, ShapeKind, SyntheticSceneSpec,
};
use proptest::prelude::*;

fn stream_strategy() -> impl Strategy<Value = EventStream> {
    (1u32..300, 1u32..300).prop_flat_map(|(w, h)| {
        prop::collection::vec((0u64..1_000_000, 0..w, 0..h, 0u8..2), 0..200).prop_map(move |raw| {
            let mut events: Vec<Event> = raw
                .into_iter()
                .map(|(t, x, y, p)| Event::new(t, x as u16, y as u16, p))
                .collect();
            events.sort_by_key(|e| e.t);
            EventStream::new(w, h, events)
        })
    })
}

proptest! {
    #[test]
    fn evt1_roundtrip_is_identity(s in stream_strategy()) {
        let bytes = encode_evt1(&s);
        let back = decode_evt1(&bytes, &LoadOptions::default()).unwrap();
        prop_assert_eq!(&back, &s);
        prop_assert_eq!(encode_evt1(&back), bytes);
    }

    #[test]
    fn csv_roundtrip_is_identity(s in stream_strategy()) {
        let text = write_csv(&s);
        let back = parse_csv(&text, &LoadOptions::with_geometry(s.width, s.height)).unwrap();
        prop_assert_eq!(back, s);
    }
}

#[test]
fn generated_clip_survives_disk() {
    let clip = generate_scene(&SyntheticSceneSpec::new(ShapeKind::MovingDisk, 48, 40, 9)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for (name, fmt) in [("c.evt1", EventFormat::Evt1), ("c.csv", EventFormat::Csv)] {
        let path = dir.path().join(name);
        save_events(&clip.stream, &path, fmt).unwrap();
        assert_eq!(EventFormat::from_path(&path), fmt);
        let back = load_events(&path, fmt, &LoadOptions::with_geometry(48, 40)).unwrap();
        assert_eq!(back, clip.stream);
    }
}

// Upper 1% point of chi-square with 15 degrees of freedom.
const CHI2_15_P01: f64 = 30.5779;

fn chi_square(counts: &[f64]) -> f64 {
    let n: f64 = counts.iter().sum();
    let expected = n / counts.len() as f64;
    counts.iter().map(|c| (c - expected).powi(2) / expected).sum()
}

#[test]
fn noise_is_uniform_over_space_and_time() {
    // 64 x 64 sensor at 0.05 events/pixel/ms for 500 ms: about 1e5 events
    let spec = SyntheticSceneSpec {
        object_rate: 0.0,
        noise_rate: 0.05,
        duration_ms: 500.0,
        ..SyntheticSceneSpec::new(ShapeKind::MovingBar, 64, 64, 2024)
    };
    let clip = generate_scene(&spec).unwrap();
    let n = clip.stream.len();
    assert!((95_000..=110_000).contains(&n), "{n} events");
    assert!(clip.truth.noise.iter().all(|&b| b));

    let mut cells = [0.0; 16];
    let mut slots = [0.0; 16];
    for e in &clip.stream.events {
        cells[(e.y as usize / 16) * 4 + e.x as usize / 16] += 1.0;
        slots[(e.t * 16 / 500_000) as usize] += 1.0;
    }
    let space = chi_square(&cells);
    let time = chi_square(&slots);
    assert!(space < CHI2_15_P01, "spatial chi-square {space}");
    assert!(time < CHI2_15_P01, "temporal chi-square {time}");
}

#[test]
fn object_events_stay_on_the_shape() {
    let spec = SyntheticSceneSpec {
        noise_rate: 0.0,
        ..SyntheticSceneSpec::new(ShapeKind::ExpandingSquare, 40, 40, 4)
    };
    let clip = generate_scene(&spec).unwrap();
    assert!(!clip.stream.is_empty());
    for e in &clip.stream.events {
        assert!(clip.truth.trajectory[e.y as usize * 40 + e.x as usize]);
    }
}

#[test]
fn reorder_window_is_enforced() {
    let text = "10,1,1,1\n5,2,2,0\n";
    let strict = LoadOptions::with_geometry(4, 4);
    assert!(parse_csv(text, &strict).is_err());
    let loose = LoadOptions {
        reorder_window: 5,
        ..strict
    };
    let s = parse_csv(text, &loose).unwrap();
    assert!(s.is_sorted());
    assert_eq!(s.events[0].t, 5);
}
