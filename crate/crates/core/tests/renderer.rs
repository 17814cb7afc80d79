use mvgrpo::edit::{apply_edit, render_candidate, EditVector, SharedEdit};
use mvgrpo::geometry::{compose, invert, warp_with_relative, Intrinsics};
use mvgrpo::rig::build_rig;
use mvgrpo::scene::{cast_pixel, Scene};
use nalgebra::{Vector2, Vector3};
use proptest::prelude::*;

/// Every pixel of view m, carried by its own depth into view m+1, must
/// show the same color there as a fresh ray cast at the exact warped
/// position — i.e. the renderer is a function of the 3D point only.
#[test]
fn zero_jitter_views_agree_on_shared_points() {
    let k = Intrinsics::centered(80.0, 96);
    let rig = build_rig(9, 4.5, 60.0, Vector3::zeros(), k).unwrap();
    let scene = Scene::default_scene();
    let shared = SharedEdit {
        color_delta: [0.1, 0.0, -0.1],
        ..SharedEdit::identity(1)
    };
    let views = render_candidate(&scene, &rig, &EditVector::consistent(shared, 9)).unwrap();
    let edited = apply_edit(&scene, &shared).unwrap();
    let mut checked = 0usize;
    for m in 0..8 {
        for (s, t) in [(m, m + 1), (m + 1, m)] {
            let rel = compose(rig.pose(t), &invert(rig.pose(s)));
            let v = &views[s];
            for y in (0..96).step_by(3) {
                for x in (0..96).step_by(3) {
                    let d = v.depth.get(x, y);
                    if d <= 0.0 {
                        continue;
                    }
                    let px = Vector2::new(x as f64, y as f64);
                    let w = warp_with_relative(&px, d, &rel, &k).unwrap();
                    if w.out_of_frame {
                        continue;
                    }
                    let (c, depth) = cast_pixel(&edited, rig.pose(t), &k, &w.pixel);
                    // only mutually visible points
                    if (depth - w.depth).abs() > 1e-6 {
                        continue;
                    }
                    let own = v.image.get(x, y);
                    for ch in 0..3 {
                        assert!((own[ch] - c[ch]).abs() <= 2.0 / 255.0, "view {s}->{t} at ({x},{y})");
                    }
                    checked += 1;
                }
            }
        }
    }
    assert!(checked > 5000, "{checked}");
}

#[test]
fn apply_edit_leaves_input_untouched() {
    let scene = Scene::default_scene();
    let before = scene.clone();
    let e = SharedEdit {
        color_delta: [0.4, 0.4, 0.4],
        translation_delta: [1.0, 2.0, 3.0],
        radius_scale: 2.0,
        target: 1,
    };
    let edited = apply_edit(&scene, &e).unwrap();
    assert_eq!(scene, before);
    assert_ne!(edited, before);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn blur_never_adds_high_frequency(s0 in 0.0f64..3.0, ds in 0.0f64..2.0) {
        let k = Intrinsics::centered(40.0, 48);
        let rig = build_rig(2, 4.5, 20.0, Vector3::zeros(), k).unwrap();
        let mut e = EditVector::consistent(SharedEdit::identity(1), 2);
        e.degradation[0].blur_sigma = s0;
        let a = render_candidate(&Scene::default_scene(), &rig, &e).unwrap();
        e.degradation[0].blur_sigma = s0 + ds;
        let b = render_candidate(&Scene::default_scene(), &rig, &e).unwrap();
        prop_assert!(b[0].image.high_frequency_energy() <= a[0].image.high_frequency_energy() + 1e-12);
    }
}
