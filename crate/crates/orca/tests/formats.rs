use chrono::NaiveDate;
use orca::buoy_text::{parse_buoy_text, write_buoy_text, Lattice};
use orca::grid_file::{decode_grid_field, encode_grid_field};
use orca::weights::{decode_weights, encode_weights};
use orca_core::params::NamedArray;
use orca_core::{FieldRole, GridField};
use proptest::prelude::*;

fn lattice(steps: usize) -> Lattice {
    let start = NaiveDate::from_ymd_opt(2021, 6, 30).unwrap().and_hms_opt(21, 0, 0).unwrap();
    Lattice { start, interval_hours: 3.0, steps }
}

proptest! {
    #[test]
    fn grid_field_round_trip(rows in 1usize..6, cols in 1usize..6, steps in 1usize..5, seed in any::<u32>()) {
        let n = rows * cols * steps;
        let values: Vec<f32> = (0..n).map(|i| f32::from_bits(seed.wrapping_mul(2654435761).wrapping_add(i as u32) % 0x7f00_0000)).collect();
        let f = GridField::new(rows, cols, steps, values, FieldRole::Surrogate).unwrap();
        let back = decode_grid_field(&encode_grid_field(&f)).unwrap();
        prop_assert_eq!(back.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), f.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        prop_assert_eq!((back.rows(), back.cols(), back.steps(), back.role()), (rows, cols, steps, FieldRole::Surrogate));
    }

    #[test]
    fn weights_round_trip(shapes in prop::collection::vec(prop::collection::vec(0usize..4, 0..3), 0..5)) {
        let arrays: Vec<NamedArray> = shapes
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let n: usize = s.iter().product();
                NamedArray { name: format!("array{}", i), shape: s.clone(), data: (0..n).map(|k| k as f32 * 0.5 - 1.0).collect() }
            })
            .collect();
        prop_assert_eq!(decode_weights(&encode_weights(&arrays)).unwrap(), arrays);
    }

    /// Written values come back to 4 decimals; gaps carry the previous
    /// observation forward and leading gaps take the first one.
    #[test]
    fn buoy_text_round_trip(cells in prop::collection::vec(prop::option::weighted(0.8, 0.0f64..30.0), 2 * 6)) {
        let features = vec!["WSPD".to_string(), "WVHT".to_string()];
        let lat = lattice(6);
        let text = write_buoy_text(&features, &lat, &cells);
        let frag = parse_buoy_text(&text, Some(lat), 3.0).unwrap();
        for f in 0..2 {
            let series = &cells[f * 6..(f + 1) * 6];
            let first = series.iter().flatten().next().copied();
            let mut last = first;
            for (t, v) in series.iter().enumerate() {
                let idx = f * 6 + t;
                prop_assert_eq!(frag.missing[idx], v.is_none());
                if let Some(x) = v {
                    last = Some(*x);
                }
                let want = last.unwrap_or(0.0);
                prop_assert!((frag.values[idx] - want).abs() <= 5.1e-5, "{} vs {}", frag.values[idx], want);
            }
        }
    }
}

#[test]
fn lattice_crosses_month_and_year_boundaries() {
    let start = NaiveDate::from_ymd_opt(2020, 12, 31).unwrap().and_hms_opt(18, 0, 0).unwrap();
    let lat = Lattice { start, interval_hours: 3.0, steps: 4 };
    let text = write_buoy_text(&["WVHT".to_string()], &lat, &[Some(1.0), Some(2.0), Some(3.0), Some(4.0)]);
    assert!(text.contains("2021 01 01 03 00 4.0000"));
    let frag = parse_buoy_text(&text, None, 3.0).unwrap();
    assert_eq!(frag.values, vec![1.0, 2.0, 3.0, 4.0]);
    assert_eq!(frag.lattice, Some(lat));
}
