use proptest::prelude::*;

use windsr_core::grids::{
    bilinear_resample, degrade, extract_gridpoint, wind_speed, DegradationParams, Extraction,
    Field, GeoBox, Grid2D, Units,
};
use windsr_core::Error;

fn affine(g: Grid2D, a: f64, b: f64, c: f64) -> Field {
    Field::from_fn(g, Units::MetersPerSecond, |r, col| {
        (a + b * g.lat(r) + c * g.lon(col)) as f32
    })
    .unwrap()
}

#[test]
fn study_area_extent() {
    let b = GeoBox::study_area();
    assert!(b.north > b.south && b.east > b.west);
    assert!(GeoBox::new(1.0, 2.0, 3.0, 0.0).is_err());
    assert!(matches!(Grid2D::new(1, 5, b), Err(Error::Shape(_))));
}

#[test]
fn resample_to_own_grid_is_identity() {
    let g = Grid2D::new(9, 13, GeoBox::study_area()).unwrap();
    let f = Field::from_fn(g, Units::MetersPerSecond, |r, c| {
        ((r * 31 + c * 7) % 11) as f32
    })
    .unwrap();
    assert_eq!(bilinear_resample(&f, &g).unwrap(), f);
}

#[test]
fn resample_rejects_disjoint_extent() {
    let g = Grid2D::new(8, 8, GeoBox::new(10.0, 0.0, 10.0, 0.0).unwrap()).unwrap();
    let far = Grid2D::new(8, 8, GeoBox::new(40.0, 30.0, 40.0, 30.0).unwrap()).unwrap();
    let f = Field::constant(g, 1.0, Units::MetersPerSecond).unwrap();
    assert!(matches!(bilinear_resample(&f, &far), Err(Error::Extent(_))));
}

#[test]
fn three_four_five() {
    let g = Grid2D::new(4, 4, GeoBox::study_area()).unwrap();
    let u = Field::constant(g, 3.0, Units::MetersPerSecond).unwrap();
    let v = Field::constant(g, -4.0, Units::MetersPerSecond).unwrap();
    assert!(wind_speed(&u, &v)
        .unwrap()
        .as_slice()
        .iter()
        .all(|&s| s == 5.0));
    let n = u.clone().with_units(Units::Normalized);
    assert!(wind_speed(&n, &v).is_err());
}

#[test]
fn degrade_without_blur_or_noise_subsamples() {
    let g = Grid2D::new(9, 9, GeoBox::study_area()).unwrap();
    let f = Field::from_fn(g, Units::MetersPerSecond, |r, c| (r * 9 + c) as f32).unwrap();
    let p = DegradationParams::identity(4, 0.0).unwrap();
    let lr = degrade(&f, &p, 0).unwrap();
    assert_eq!(lr.grid().shape(), (3, 3));
    for i in 0..3 {
        for j in 0..3 {
            assert_eq!(lr.get(i, j), f.get(4 * i, 4 * j));
        }
    }
    // The coarse grid keeps the anchor corner and the fine spacing times 4.
    assert_eq!(lr.grid().lat(1), g.lat(4));
    assert_eq!(lr.grid().lon(2), g.lon(8));
}

#[test]
fn degrade_blurs_constants_to_constants() {
    let g = Grid2D::new(16, 16, GeoBox::study_area()).unwrap();
    let f = Field::constant(g, 7.5, Units::MetersPerSecond).unwrap();
    let lr = degrade(&f, &DegradationParams::gaussian(1.0, 4, 0.0).unwrap(), 3).unwrap();
    assert!(lr.as_slice().iter().all(|&v| (v - 7.5).abs() < 1e-5));
}

#[test]
fn degrade_rejects_bad_parameters() {
    let g = Grid2D::new(4, 4, GeoBox::study_area()).unwrap();
    let f = Field::constant(g, 1.0, Units::MetersPerSecond).unwrap();
    assert!(matches!(
        degrade(&f, &DegradationParams::gaussian(1.0, 1, 0.0).unwrap(), 0),
        Err(Error::Kernel(_))
    ));
    assert!(DegradationParams::new(ndarray::Array2::from_elem((2, 2), 0.25), 2, 0.0).is_err());
    assert!(DegradationParams::new(ndarray::Array2::from_elem((3, 3), 0.2), 2, 0.0).is_err());
    assert!(DegradationParams::gaussian(1.0, 0, 0.0).is_err());
    assert!(DegradationParams::gaussian(1.0, 2, -0.1).is_err());
    assert!(degrade(&f, &DegradationParams::identity(4, 0.0).unwrap(), 0).is_err());
}

#[test]
fn noise_has_requested_spread() {
    let g = Grid2D::new(400, 400, GeoBox::study_area()).unwrap();
    let f = Field::constant(g, 2.0, Units::MetersPerSecond).unwrap();
    let lr = degrade(&f, &DegradationParams::identity(2, 0.5).unwrap(), 9).unwrap();
    let n = lr.as_slice().len() as f64;
    let mean = lr.mean();
    let var = lr
        .as_slice()
        .iter()
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / (n - 1.0);
    assert!((mean - 2.0).abs() < 0.01);
    assert!((var.sqrt() / 0.5 - 1.0).abs() < 0.02);
}

#[test]
fn extraction_at_nodes_and_between() {
    let g = Grid2D::new(5, 5, GeoBox::new(4.0, 0.0, 4.0, 0.0).unwrap()).unwrap();
    let f = affine(g, 1.0, 2.0, -3.0);
    assert_eq!(
        extract_gridpoint(&f, 3.0, 1.0, Extraction::Nearest).unwrap(),
        f.get(1, 1)
    );
    let v = extract_gridpoint(&f, 2.25, 1.75, Extraction::Bilinear).unwrap();
    assert!((v as f64 - (1.0 + 4.5 - 5.25)).abs() < 1e-5);
    // Halfway between rows 1 and 2 goes to the lower row index.
    assert_eq!(
        extract_gridpoint(&f, 2.5, 1.0, Extraction::Nearest).unwrap(),
        f.get(1, 1)
    );
    assert!(matches!(
        extract_gridpoint(&f, 5.0, 1.0, Extraction::Nearest),
        Err(Error::Extent(_))
    ));
}

proptest! {
    #[test]
    fn bilinear_reproduces_affine_fields(
        a in -10.0f64..10.0, b in -1.0f64..1.0, c in -1.0f64..1.0,
        src in 3usize..20, dst in 2usize..50,
    ) {
        let boxx = GeoBox::new(20.0, 10.0, 30.0, 15.0).unwrap();
        let s = Grid2D::new(src, src + 1, boxx).unwrap();
        let t = Grid2D::new(dst, dst + 3, boxx).unwrap();
        let out = bilinear_resample(&affine(s, a, b, c), &t).unwrap();
        let want = affine(t, a, b, c);
        for (x, y) in out.as_slice().iter().zip(want.as_slice()) {
            prop_assert!((x - y).abs() <= 1e-4 * (1.0 + y.abs()), "{} vs {}", x, y);
        }
    }

    #[test]
    fn resample_there_and_back_on_nested_grids(k in 1usize..5, n in 2usize..8, seed in any::<u64>()) {
        // Coarse nodes are a subset of the fine nodes, so coarse -> fine -> coarse is exact.
        let boxx = GeoBox::study_area();
        let coarse = Grid2D::new(n, n, boxx).unwrap();
        let fine = Grid2D::new((n - 1) * k + 1, (n - 1) * k + 1, boxx).unwrap();
        let f = Field::from_fn(coarse, Units::MetersPerSecond, |r, c| {
            ((seed.wrapping_mul(r as u64 * 131 + c as u64 + 1) >> 40) % 1000) as f32 / 100.0
        }).unwrap();
        let back = bilinear_resample(&bilinear_resample(&f, &fine).unwrap(), &coarse).unwrap();
        for (x, y) in back.as_slice().iter().zip(f.as_slice()) {
            prop_assert!((x - y).abs() <= 1e-4);
        }
    }

    #[test]
    fn wind_speed_is_non_negative_norm(u in proptest::collection::vec(-60.0f32..60.0, 16), v in proptest::collection::vec(-60.0f32..60.0, 16)) {
        let g = Grid2D::new(4, 4, GeoBox::study_area()).unwrap();
        let fu = Field::from_vec(g, u.clone(), Units::MetersPerSecond).unwrap();
        let fv = Field::from_vec(g, v.clone(), Units::MetersPerSecond).unwrap();
        let s = wind_speed(&fu, &fv).unwrap();
        for i in 0..16 {
            prop_assert!(s.as_slice()[i] >= 0.0);
            prop_assert!((s.as_slice()[i] - u[i].hypot(v[i])).abs() <= 1e-4);
            prop_assert!(s.as_slice()[i] >= u[i].abs().max(v[i].abs()) - 1e-4);
        }
    }

    #[test]
    fn degrade_is_seeded(seed in any::<u64>()) {
        let g = Grid2D::new(16, 16, GeoBox::study_area()).unwrap();
        let f = Field::from_fn(g, Units::MetersPerSecond, |r, c| (r + 2 * c) as f32).unwrap();
        let p = DegradationParams::gaussian(1.0, 4, 0.3).unwrap();
        let a = degrade(&f, &p, seed).unwrap();
        prop_assert_eq!(&a, &degrade(&f, &p, seed).unwrap());
        prop_assert_ne!(&a, &degrade(&f, &p, seed.wrapping_add(1)).unwrap());
    }
}
