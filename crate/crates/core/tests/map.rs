use gridmix::features::VcsFrame;
use gridmix::map::{
    make_grid, point_in_polygon, rasterize, Extent, MapConfig, ScenarioGeometry,
    CHANNEL_CENTERLINE, CHANNEL_DRIVEABLE,
};
use proptest::prelude::*;

fn rigid(p: [f64; 2], angle: f64, shift: [f64; 2]) -> [f64; 2] {
    let (s, c) = angle.sin_cos();
    [
        c * p[0] - s * p[1] + shift[0],
        s * p[0] + c * p[1] + shift[1],
    ]
}

/// Star-shaped polygon around `center` with random radii.
fn polygon() -> impl Strategy<Value = Vec<[f64; 2]>> {
    (
        -20.0f64..60.0,
        -40.0f64..40.0,
        prop::collection::vec(2.0f64..25.0, 3..12),
    )
        .prop_map(|(cx, cy, radii)| {
            let n = radii.len();
            radii
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    let a = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                    [cx + r * a.cos(), cy + r * a.sin()]
                })
                .collect()
        })
}

fn geometry() -> impl Strategy<Value = ScenarioGeometry> {
    (
        prop::collection::vec(polygon(), 1..4),
        prop::collection::vec(
            prop::collection::vec((-30.0f64..70.0, -40.0f64..40.0), 2..6),
            0..3,
        ),
    )
        .prop_map(|(driveable_polygons, lines)| ScenarioGeometry {
            driveable_polygons,
            centerlines: lines
                .into_iter()
                .map(|l| l.into_iter().map(|(x, y)| [x, y]).collect())
                .collect(),
        })
}

#[test]
fn default_grid_has_hundred_square_cells() {
    let grid = make_grid(Extent::default(), 10).unwrap();
    assert_eq!(grid.k(), 100);
    let [w, h] = grid.cell_size();
    assert!((w - 6.4).abs() < 1e-12 && (h - 6.4).abs() < 1e-12);
}

proptest! {
    #[test]
    fn grid_partitions_the_extent(
        n in 1usize..12,
        fx in 0.0f64..1.0,
        fy in 0.0f64..1.0,
    ) {
        let e = Extent::default();
        let grid = make_grid(e, n).unwrap();
        let p = [e.x_min + fx * e.width(), e.y_min + fy * e.height()];
        let j = grid.assign(p).unwrap();
        let owners: Vec<usize> = (0..grid.k())
            .filter(|&i| {
                let b = grid.cell_bounds(i);
                let last_col = i % n == n - 1;
                let last_row = i / n == n - 1;
                let in_x = p[0] >= b.x_min && (p[0] < b.x_max || last_col && p[0] <= b.x_max);
                let in_y = p[1] >= b.y_min && (p[1] < b.y_max || last_row && p[1] <= b.y_max);
                in_x && in_y
            })
            .collect();
        prop_assert_eq!(owners, vec![j]);
        let c = grid.centers()[j];
        let [w, h] = grid.cell_size();
        prop_assert!((p[0] - c[0]).abs() <= w / 2.0 + 1e-12);
        prop_assert!((p[1] - c[1]).abs() <= h / 2.0 + 1e-12);
    }

    #[test]
    fn points_outside_the_extent_are_rejected(dx in 0.001f64..100.0, side in 0usize..4) {
        let e = Extent::default();
        let grid = make_grid(e, 10).unwrap();
        let p = match side {
            0 => [e.x_min - dx, 0.0],
            1 => [e.x_max + dx, 0.0],
            2 => [0.0, e.y_min - dx],
            _ => [0.0, e.y_max + dx],
        };
        prop_assert!(grid.assign(p).is_err());
    }

    #[test]
    fn driveable_channel_matches_point_tests(
        geo in geometry(),
        ox in -5.0f64..5.0,
        oy in -5.0f64..5.0,
        heading in -3.2f64..3.2,
    ) {
        let config = MapConfig::with_pixels(Extent::default(), 64);
        let frame = VcsFrame::new([ox, oy], heading);
        let raster = rasterize(&geo, &frame, &config).unwrap();
        for row in 0..raster.height() {
            for col in 0..raster.width() {
                let global = frame.from_vcs(raster.pixel_center(row, col));
                let local = frame.to_vcs(global);
                let inside = geo.driveable_polygons.iter().any(|poly| {
                    let local_poly: Vec<[f64; 2]> =
                        poly.iter().map(|&p| frame.to_vcs(p)).collect();
                    point_in_polygon(local, &local_poly)
                });
                prop_assert_eq!(raster.get(CHANNEL_DRIVEABLE, row, col) == 1, inside);
            }
        }
        let again = rasterize(&geo, &frame, &config).unwrap();
        prop_assert_eq!(&raster, &again);
    }

    #[test]
    fn rasters_are_rigid_motion_invariant(
        geo in geometry(),
        heading in -3.2f64..3.2,
        angle in -3.2f64..3.2,
        sx in -500.0f64..500.0,
        sy in -500.0f64..500.0,
    ) {
        let config = MapConfig::with_pixels(Extent::default(), 64);
        let frame = VcsFrame::new([1.0, -2.0], heading);
        let moved = ScenarioGeometry {
            driveable_polygons: geo
                .driveable_polygons
                .iter()
                .map(|p| p.iter().map(|&q| rigid(q, angle, [sx, sy])).collect())
                .collect(),
            centerlines: geo
                .centerlines
                .iter()
                .map(|p| p.iter().map(|&q| rigid(q, angle, [sx, sy])).collect())
                .collect(),
        };
        let moved_frame = VcsFrame::new(rigid([1.0, -2.0], angle, [sx, sy]), heading + angle);
        let a = rasterize(&geo, &frame, &config).unwrap();
        let b = rasterize(&moved, &moved_frame, &config).unwrap();
        let differing = a
            .cells()
            .iter()
            .zip(b.cells())
            .filter(|(x, y)| x != y)
            .count();
        // Boundary pixels may flip from last-bit rounding of the transform.
        prop_assert!(differing <= 2, "{differing} pixels differ");
    }
}

#[test]
fn centerline_channel_marks_every_pixel_crossed() {
    let config = MapConfig::with_pixels(Extent::default(), 128);
    let geo = ScenarioGeometry {
        driveable_polygons: vec![],
        centerlines: vec![vec![[-10.0, -30.0], [50.0, 30.0]]],
    };
    let raster = rasterize(&geo, &VcsFrame::identity(), &config).unwrap();
    // A 45-degree diagonal through pixel corners: one pixel per row and
    // column, all on the diagonal.
    let marked: Vec<(usize, usize)> = (0..128)
        .flat_map(|r| (0..128).map(move |c| (r, c)))
        .filter(|&(r, c)| raster.get(CHANNEL_CENTERLINE, r, c) == 1)
        .collect();
    assert!(
        marked.len() >= 120 && marked.len() <= 121,
        "{}",
        marked.len()
    );
    assert!(marked.iter().all(|&(r, c)| r.abs_diff(c) <= 6));
}
