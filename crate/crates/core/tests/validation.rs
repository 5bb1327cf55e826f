use chrono::{DateTime, Duration, TimeZone, Timelike, Utc};
use proptest::prelude::*;

use windsr_core::grids::{Extraction, Field, FieldSeries, GeoBox, Grid2D, Units};
use windsr_core::validation::{
    build_validation_set, collapse_hour, filter_slots, parse_observations_from,
    prepare_observations, score, select_surface, Product, ScoreTable, SlotRule, StationObservation,
    ValidationSet,
};
use windsr_core::Error;

fn at(d: u32, h: u32, m: u32) -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2009, 6, d, h, m, 0).unwrap()
}

fn obs(id: &str, t: DateTime<Utc>, p: f64, w: f64) -> StationObservation {
    StationObservation {
        station_id: id.into(),
        lat: 41.0,
        lon: 12.0,
        timestamp: t,
        pressure_hpa: p,
        wind_ms: w,
    }
}

const HEADER: &str = "station_id,lat,lon,timestamp_iso,pressure_hpa,wind_ms\n";

#[test]
fn mixed_csv_keeps_valid_rows() {
    let body = "\
A,41.0,12.0,2009-06-01T11:30:00Z,1000,5.0
A,41.0,12.0,2009-06-01T11:30:00Z,925,7.5
B,42.0,13.0,2009-06-01T23:10:00Z,1010,3.0
B,42.0,13.0,2009-06-01T23:10:00Z,-5,3.0
C,40.5,11.0,2009-06-02 11:05,990,2.2
C,40.5,11.0,not-a-time,990,2.2
D,43.0,14.0,2009-06-02T23:59:00Z,1002,0.0
D,43.0,14.0,2009-06-02T23:59:00Z,850,12.0
E,39.0,10.0,2009-06-03T11:00:00Z,1001,4.4
E,39.0,10.0,2009-06-03T11:00:00Z,700,20.1
";
    let parsed = parse_observations_from(format!("{HEADER}{body}").as_bytes(), "fixture").unwrap();
    assert_eq!(parsed.records.len(), 8);
    assert_eq!(
        parsed.errors.iter().map(|e| e.line).collect::<Vec<_>>(),
        vec![5, 7]
    );
    assert_eq!(parsed.records[3].timestamp, at(2, 11, 5));

    let three = "A,41,12,2009-06-01T11:30:00Z,1000,5\nA,41,12,2009-06-01T11:30:00Z,925,6\nB,41,12,2009-06-01T11:30:00Z,1000,7\n";
    assert_eq!(
        parse_observations_from(format!("{HEADER}{three}").as_bytes(), "x")
            .unwrap()
            .records
            .len(),
        3
    );
    let none = parse_observations_from(format!("{HEADER}A,41,12,bad,1000,5\n").as_bytes(), "x");
    assert!(none.is_err());
    assert!(parse_observations_from(&b"a,b\n1,2\n"[..], "x").is_err());
}

#[test]
fn surface_level_matches_group_max_scan() {
    let mut all = Vec::new();
    let levels = [
        ("A", at(1, 11, 0), vec![850.0, 925.0, 1000.0]),
        ("A", at(1, 23, 0), vec![1005.0]),
        ("B", at(1, 11, 0), vec![700.0, 1012.0, 1012.0, 500.0]),
        ("C", at(2, 11, 30), vec![990.0, 300.0]),
        ("B", at(2, 23, 15), vec![600.0, 1001.0, 850.0]),
    ];
    let mut w = 0.0;
    for (id, t, ps) in &levels {
        for p in ps {
            w += 1.0;
            all.push(obs(id, *t, *p, w));
        }
    }
    let got = select_surface(&all);
    assert_eq!(got.len(), 5);
    for (id, t, _) in &levels {
        let group: Vec<_> = all
            .iter()
            .filter(|o| o.station_id == *id && o.timestamp == *t)
            .collect();
        let max = group
            .iter()
            .map(|o| o.pressure_hpa)
            .fold(f64::MIN, f64::max);
        let first = group.iter().find(|o| o.pressure_hpa == max).unwrap();
        let kept: Vec<_> = got
            .iter()
            .filter(|o| o.station_id == *id && o.timestamp == *t)
            .collect();
        assert_eq!(kept, vec![*first]);
    }
    assert_eq!(got[0].pressure_hpa, 1000.0);
}

#[test]
fn hour_sweep_keeps_the_hour_before_each_slot() {
    let day: Vec<_> = (0..24)
        .map(|h| obs("A", at(1, h, 0), 1000.0, h as f64))
        .collect();
    let kept = filter_slots(&day, &SlotRule::default());
    assert_eq!(
        kept.iter().map(|o| o.timestamp.hour()).collect::<Vec<_>>(),
        vec![11, 23]
    );
    let half: Vec<_> = (0..48)
        .map(|k| obs("A", at(1, 0, 0) + Duration::minutes(30 * k), 1000.0, 0.0))
        .collect();
    let kept = filter_slots(&half, &SlotRule::default());
    let hm: Vec<_> = kept
        .iter()
        .map(|o| (o.timestamp.hour(), o.timestamp.minute()))
        .collect();
    assert_eq!(hm, vec![(11, 0), (11, 30), (23, 0), (23, 30)]);
    assert_eq!(
        filter_slots(&[obs("A", at(1, 6, 0), 1000.0, 1.0)], &SlotRule::default()).len(),
        0
    );
    let marks = SlotRule {
        include_mark: true,
        ..SlotRule::default()
    };
    assert_eq!(filter_slots(&day, &marks).len(), 4);
}

#[test]
fn collapse_examples() {
    let one = collapse_hour(&[obs("A", at(1, 11, 47), 1000.0, 6.0)]).unwrap();
    assert_eq!((one.wind_ms, one.timestamp), (6.0, at(1, 12, 0)));
    let two = collapse_hour(&[
        obs("A", at(1, 11, 10), 1000.0, 4.0),
        obs("A", at(1, 11, 50), 1000.0, 6.0),
    ])
    .unwrap();
    assert_eq!(two.wind_ms, 5.0);
    let three = collapse_hour(&[
        obs("A", at(1, 23, 5), 1000.0, 2.5),
        obs("A", at(1, 23, 20), 1000.0, 4.0),
        obs("A", at(1, 23, 55), 1000.0, 9.1),
    ])
    .unwrap();
    assert!((three.wind_ms - (2.5 + 4.0 + 9.1) / 3.0).abs() < 1e-12);
    assert_eq!(three.timestamp, at(2, 0, 0));
    assert!(collapse_hour(&[
        obs("A", at(1, 23, 5), 1000.0, 1.0),
        obs("B", at(1, 23, 5), 1000.0, 1.0)
    ])
    .is_err());
    assert!(collapse_hour(&[]).is_err());
}

/// Product whose value at every cell of frame k is `base + k`.
fn product(name: &str, t0: DateTime<Utc>, frames: usize, base: f32) -> Product {
    let g = Grid2D::new(5, 5, GeoBox::new(44.0, 38.0, 16.0, 8.0).unwrap()).unwrap();
    let fs = (0..frames)
        .map(|k| {
            Field::from_fn(g, Units::MetersPerSecond, |r, c| {
                base + k as f32 + 0.01 * (r * 5 + c) as f32
            })
            .unwrap()
        })
        .collect();
    Product::new(name, FieldSeries::new(t0, 3, fs).unwrap()).unwrap()
}

#[test]
fn join_matches_nested_loop_oracle() {
    let stations = [("S1", 41.0, 12.0), ("S2", 39.5, 9.0), ("S3", 43.0, 15.0)];
    let times = [at(1, 0, 0), at(1, 12, 0), at(2, 0, 0), at(2, 12, 0)];
    let mut collapsed = Vec::new();
    for (i, (id, lat, lon)) in stations.iter().enumerate() {
        for (j, t) in times.iter().enumerate() {
            let mut o = obs(id, *t, 1000.0, 3.0 + i as f64 + 0.5 * j as f64);
            (o.lat, o.lon) = (*lat, *lon);
            collapsed.push(o);
        }
    }
    // `hr` starts at 06:00 on day 1, so it has no frame at the first slot.
    let lr = product("lr", at(1, 0, 0), 16, 2.0);
    let hr = product("hr", at(1, 6, 0), 12, 4.0);
    let products = [lr, hr];
    let set = build_validation_set(&collapsed, &products, Extraction::Nearest).unwrap();

    let mut oracle = Vec::new();
    for o in &collapsed {
        let mut vals = Vec::new();
        for p in &products {
            for (k, t) in p.series.times().enumerate() {
                if t == o.timestamp {
                    let f = &p.series.frames()[k];
                    let (fr, fc) = f.grid().fractional_index(o.lat, o.lon);
                    vals.push(f.get((fr - 0.5).ceil() as usize, (fc - 0.5).ceil() as usize) as f64);
                }
            }
        }
        if vals.len() == products.len() {
            oracle.push((o.station_id.clone(), o.timestamp, vals));
        }
    }
    assert_eq!(set.records.len(), oracle.len());
    assert_eq!(set.records.len(), 9);
    assert_eq!(set.dropped_missing, 3);
    assert_eq!(
        set.records.len() + set.dropped_missing + set.dropped_outside,
        collapsed.len()
    );
    for (r, (id, t, vals)) in set.records.iter().zip(&oracle) {
        assert_eq!((&r.station_id, r.timestamp), (id, *t));
        assert_eq!(&r.values, vals);
    }

    let table = score(&set).unwrap();
    for (p, row) in table.rows.iter().enumerate() {
        let n = oracle.len() as f64;
        let mae = set
            .records
            .iter()
            .map(|r| (r.values[p] - r.observed).abs())
            .sum::<f64>()
            / n;
        let mse = set
            .records
            .iter()
            .map(|r| (r.values[p] - r.observed).powi(2))
            .sum::<f64>()
            / n;
        assert!((row.mae - mae).abs() <= 1e-9 && (row.mse - mse).abs() <= 1e-9);
        assert!(row.mae <= row.mse.sqrt() + 1e-12);
    }
}

#[test]
fn outside_and_unmatched_observations() {
    let p = [product("a", at(1, 0, 0), 4, 1.0)];
    let mut far = obs("F", at(1, 0, 0), 1000.0, 1.0);
    far.lat = 60.0;
    let set = build_validation_set(
        &[far, obs("A", at(1, 3, 0), 1000.0, 1.0)],
        &p,
        Extraction::Nearest,
    )
    .unwrap();
    assert_eq!((set.records.len(), set.dropped_outside), (1, 1));
    let err = build_validation_set(
        &[obs("A", at(5, 0, 0), 1000.0, 1.0)],
        &p,
        Extraction::Nearest,
    )
    .unwrap_err();
    assert!(matches!(err, Error::Alignment(_)));
}

#[test]
fn scoring_fixed_points() {
    let one = ValidationSet {
        products: vec!["p".into()],
        records: vec![windsr_core::validation::ValidationRecord {
            station_id: "A".into(),
            timestamp: at(1, 0, 0),
            lat: 0.0,
            lon: 0.0,
            observed: 5.0,
            values: vec![6.0],
        }],
        dropped_missing: 0,
        dropped_outside: 0,
    };
    let t = score(&one).unwrap();
    assert_eq!((t.rows[0].mae, t.rows[0].mse), (1.0, 1.0));
    let mut empty = one.clone();
    empty.records.clear();
    assert!(matches!(score(&empty), Err(Error::Parameter(_))));
}

#[test]
fn reference_table_layout() {
    let text = ScoreTable::reference_fixture().render();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("Model") && lines[0].contains("MAE") && lines[0].contains("MSE"));
    let names: Vec<&str> = lines[1..]
        .iter()
        .map(|l| l.split_whitespace().next().unwrap())
        .collect();
    assert_eq!(names, vec!["ERA5", "CERRA", "Ensemble"]);
    assert_eq!(
        lines[1].split_whitespace().collect::<Vec<_>>(),
        vec!["ERA5", "2.04", "8.45"]
    );
    assert_eq!(
        lines[3].split_whitespace().collect::<Vec<_>>(),
        vec!["Ensemble", "1.87", "7.41"]
    );
}

fn arb_obs() -> impl Strategy<Value = Vec<StationObservation>> {
    proptest::collection::vec(
        (
            0usize..3,
            0i64..96,
            prop_oneof![Just(850.0), Just(925.0), Just(1000.0), Just(1010.0)],
            0.0f64..25.0,
        ),
        1..60,
    )
    .prop_map(|v| {
        v.into_iter()
            .map(|(s, q, p, w)| {
                obs(
                    ["A", "B", "C"][s],
                    at(1, 0, 0) + Duration::minutes(15 * q),
                    p,
                    w,
                )
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn surface_and_slot_filters_commute(o in arb_obs()) {
        let rule = SlotRule::default();
        prop_assert_eq!(filter_slots(&select_surface(&o), &rule), select_surface(&filter_slots(&o, &rule)));
    }

    #[test]
    fn self_scoring_is_zero_and_records_conserved(o in arb_obs()) {
        let prepared = prepare_observations(&o, &SlotRule::default()).unwrap();
        prop_assume!(!prepared.is_empty());
        let p = [product("a", at(1, 0, 0), 16, 1.0)];
        let mut set = match build_validation_set(&prepared, &p, Extraction::Bilinear) {
            Ok(s) => s,
            Err(_) => return Ok(()),
        };
        prop_assert_eq!(set.records.len() + set.dropped_missing + set.dropped_outside, prepared.len());
        let t = score(&set).unwrap();
        prop_assert!(t.rows[0].mae <= t.rows[0].mse.sqrt() + 1e-12);
        for r in &mut set.records {
            r.observed = r.values[0];
        }
        let t = score(&set).unwrap();
        prop_assert_eq!((t.rows[0].mae, t.rows[0].mse), (0.0, 0.0));
    }
}
