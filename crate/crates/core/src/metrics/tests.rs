use super::*;
use crate::audio::annotation::Interval;
use crate::util::rng;
use proptest::prelude::*;
use rand::Rng;

/// Largest matching by trying every injective assignment.
fn brute_matching(est: &[f64], reference: &[f64], tol: f64) -> usize {
    fn go(i: usize, est: &[f64], reference: &[f64], used: &mut Vec<bool>, tol: f64) -> usize {
        if i == est.len() {
            return 0;
        }
        let mut best = go(i + 1, est, reference, used, tol);
        for j in 0..reference.len() {
            if !used[j] && within(est[i], reference[j], tol) {
                used[j] = true;
                best = best.max(1 + go(i + 1, est, reference, used, tol));
                used[j] = false;
            }
        }
        best
    }
    go(0, est, reference, &mut vec![false; reference.len()], tol)
}

fn brute_f(est: &[f64], reference: &[f64], tol: f64) -> f64 {
    let tp = brute_matching(est, reference, tol);
    MatchCounts {
        tp,
        fp: est.len() - tp,
        fn_: reference.len() - tp,
    }
    .f_measure()
}

fn random_events(r: &mut impl Rng, max: usize, span: f64) -> Vec<f64> {
    let n = r.random_range(0..=max);
    let mut v: Vec<f64> = (0..n).map(|_| (r.random::<f64>() * span * 100.0).round() / 100.0).collect();
    v.sort_by(f64::total_cmp);
    v
}

#[test]
fn beat_hand_cases() {
    let reference = [1.0, 2.0, 3.0];
    let c = match_events(&[1.05, 2.5], &reference, 0.07).unwrap();
    assert_eq!(c, MatchCounts { tp: 1, fp: 1, fn_: 2 });
    assert_eq!(c.precision(), 0.5);
    assert_eq!(c.recall(), 1.0 / 3.0);
    assert!((c.f_measure() - 0.4).abs() < 1e-15);
    assert_eq!(beat_f1(&reference, &reference, 0.07).unwrap(), 1.0);
    assert_eq!(beat_f1(&[], &reference, 0.07).unwrap(), 0.0);
    assert_eq!(beat_f1(&[], &[], 0.07).unwrap(), 1.0);
    assert!(beat_f1(&[2.0, 1.0], &reference, 0.07).is_err());
}

#[test]
fn boundary_hand_cases() {
    let c = match_events(&[10.3, 25.0], &[10.0, 20.0], 0.5).unwrap();
    assert_eq!((c.tp, c.precision(), c.recall()), (1, 0.5, 0.5));
    assert_eq!(boundary_hr(&[10.3, 25.0], &[10.0, 20.0], 0.5).unwrap(), 0.5);
    assert_eq!(boundary_hr(&[10.5], &[10.0], 0.5).unwrap(), 1.0);
    assert_eq!(boundary_hr(&[10.5000001], &[10.0], 0.5).unwrap(), 0.0);
}

#[test]
fn greedy_is_not_enough() {
    // greedy nearest would pair 1.0 with 1.06 and leave 1.13 unmatched
    let est = [1.0, 1.13];
    let reference = [0.95, 1.06];
    assert_eq!(match_events(&est, &reference, 0.07).unwrap().tp, 2);
}

#[test]
fn matching_agrees_with_exhaustive_oracle() {
    let mut r = rng(21);
    for _ in 0..1000 {
        let est = random_events(&mut r, 8, 2.0);
        let reference = random_events(&mut r, 8, 2.0);
        let tol = [0.07, 0.2, 0.5][r.random_range(0..3)];
        assert_eq!(
            match_events(&est, &reference, tol).unwrap().tp,
            brute_matching(&est, &reference, tol),
            "{est:?} {reference:?} {tol}"
        );
        assert_eq!(beat_f1(&est, &reference, tol).unwrap(), brute_f(&est, &reference, tol));
    }
}

proptest! {
    #[test]
    fn self_match_is_perfect(mut xs in prop::collection::vec(0.0f64..100.0, 1..30)) {
        xs.sort_by(f64::total_cmp);
        prop_assert_eq!(beat_f1(&xs, &xs, 0.07).unwrap(), 1.0);
    }

    #[test]
    fn f_measure_in_unit_interval(mut a in prop::collection::vec(0.0f64..10.0, 0..20), mut b in prop::collection::vec(0.0f64..10.0, 0..20)) {
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let f = boundary_hr(&a, &b, 0.5).unwrap();
        prop_assert!((0.0..=1.0).contains(&f));
    }
}

fn ivs(xs: &[(f64, f64, &str)]) -> LabeledIntervals {
    LabeledIntervals::new(xs.iter().map(|&(a, b, l)| Interval::new(a, b, l)).collect())
}

#[test]
fn chord_hand_cases() {
    let reference = ivs(&[(0.0, 2.0, "C:maj"), (2.0, 4.0, "A:min")]);
    let est = ivs(&[(0.0, 1.0, "C:maj"), (1.0, 4.0, "A:min")]);
    assert_eq!(chord_weighted_acc(&est, &reference).unwrap(), 0.75);
    assert_eq!(chord_weighted_acc(&reference, &reference).unwrap(), 1.0);
    let none = ivs(&[(0.0, 4.0, "N")]);
    assert_eq!(chord_weighted_acc(&none, &reference).unwrap(), 0.0);
    assert!(chord_weighted_acc(&est, &ivs(&[])).is_err());
    assert!(chord_weighted_acc(&ivs(&[(0.0, 1.0, "C:7")]), &reference).is_err());
    // spelled differently, same class
    assert_eq!(chord_weighted_acc(&ivs(&[(0.0, 4.0, "C")]), &ivs(&[(0.0, 4.0, "C:maj")])).unwrap(), 1.0);
}

fn random_chords(r: &mut impl Rng, total_ms: u32) -> LabeledIntervals {
    let mut out = Vec::new();
    let mut t = r.random_range(0..200);
    while t < total_ms {
        let len = r.random_range(1..800).min(total_ms - t);
        let label = HarmonyLabel::from_index(r.random_range(0..4) * 6).unwrap().chord_name();
        out.push(Interval::new(t as f64 / 1000.0, (t + len) as f64 / 1000.0, label));
        t += len + if r.random_bool(0.2) { r.random_range(1..100) } else { 0 };
    }
    LabeledIntervals::new(out)
}

fn raster_acc(est: &LabeledIntervals, reference: &LabeledIntervals, total_ms: u32) -> f64 {
    let lab = |a: &LabeledIntervals, t: f64| a.label_at(t).map(|l| l.parse::<HarmonyLabel>().unwrap());
    let (mut hit, mut total) = (0u32, 0u32);
    for ms in 0..total_ms {
        let t = (ms as f64 + 0.5) / 1000.0;
        if let Some(rl) = lab(reference, t) {
            total += 1;
            if lab(est, t) == Some(rl) {
                hit += 1;
            }
        }
    }
    hit as f64 / total as f64
}

#[test]
fn chord_accuracy_matches_millisecond_raster() {
    let mut r = rng(5);
    for _ in 0..300 {
        let total_ms = r.random_range(500..6000);
        let reference = random_chords(&mut r, total_ms);
        let est = random_chords(&mut r, total_ms);
        if reference.intervals.is_empty() {
            continue;
        }
        let a = chord_weighted_acc(&est, &reference).unwrap();
        let b = raster_acc(&est, &reference, total_ms);
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
}

#[test]
fn key_weights() {
    let cfg = MetricConfig::default();
    let k = |e: &str, r: &str| key_weighted_score_str(e, r, &cfg).unwrap();
    assert_eq!(k("C major", "C major"), 1.0);
    assert_eq!(k("G major", "C major"), 0.5);
    assert_eq!(k("F major", "C major"), 0.0);
    assert_eq!(k("E minor", "A minor"), 0.5);
    assert_eq!(k("A minor", "C major"), 0.3);
    assert_eq!(k("C major", "A minor"), 0.3);
    assert_eq!(k("C minor", "C major"), 0.2);
    assert_eq!(k("D major", "C major"), 0.0);
    assert_eq!(k("none", "none"), 1.0);
    assert_eq!(k("none", "C major"), 0.0);
    assert_eq!(k("C major", "none"), 0.0);
    assert!(key_weighted_score_str("H major", "C major", &cfg).is_err());
}

#[test]
fn frame_accuracy_cases() {
    assert_eq!(frame_accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
    assert_eq!(frame_accuracy(&[1, 2, 3, 4], &[1, 0, 3, 0]).unwrap(), 0.5);
    assert!(frame_accuracy::<u8>(&[], &[]).is_err());
    assert!(frame_accuracy(&[1], &[1, 2]).is_err());
}

#[test]
fn tagging_hand_cases() {
    let s = [0.9, 0.8, 0.7, 0.6];
    let l = [true, false, true, false];
    assert_eq!(roc_auc(&s, &l), Some(0.75));
    let ap = average_precision(&s, &l).unwrap();
    assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    assert!((ap - 0.8333).abs() < 1e-4);
    assert_eq!(roc_auc(&[0.9, 0.8, 0.1], &[true, true, false]), Some(1.0));
    assert_eq!(average_precision(&[0.9, 0.8, 0.1], &[true, true, false]), Some(1.0));
    assert_eq!(roc_auc(&[0.5; 6], &[true, false, true, false, false, true]), Some(0.5));
    assert_eq!(roc_auc(&[0.5, 0.4], &[true, true]), None);
    // ties resolved by index: the earlier clip ranks first
    assert_eq!(average_precision(&[0.5, 0.5], &[false, true]), Some(0.5));
}

fn pairwise_auc(s: &[f64], l: &[bool]) -> Option<f64> {
    let (mut doubled, mut pairs) = (0u64, 0u64);
    for i in 0..s.len() {
        for j in 0..s.len() {
            if l[i] && !l[j] {
                pairs += 1;
                doubled += if s[i] > s[j] { 2 } else if s[i] == s[j] { 1 } else { 0 };
            }
        }
    }
    (pairs > 0).then(|| doubled as f64 / (2 * pairs) as f64)
}

#[test]
fn auc_matches_pairwise_oracle() {
    let mut r = rng(31);
    for _ in 0..1000 {
        let n = r.random_range(2..=50);
        let levels = r.random_range(1..10);
        let s: Vec<f64> = (0..n).map(|_| r.random_range(0..levels) as f64 / levels as f64).collect();
        let l: Vec<bool> = (0..n).map(|_| r.random_bool(0.4)).collect();
        assert_eq!(roc_auc(&s, &l), pairwise_auc(&s, &l));
    }
}

#[test]
fn tagging_macro_average_skips_degenerate_columns() {
    let scores = vec![vec![0.9, 0.1], vec![0.8, 0.2], vec![0.7, 0.3], vec![0.6, 0.4]];
    let labels = vec![vec![true, true], vec![false, true], vec![true, true], vec![false, true]];
    let (map, auc) = tagging_scores(&scores, &labels).unwrap();
    assert_eq!(auc, 0.75);
    assert!((map - (0.8333333333333333 + 1.0) / 2.0).abs() < 1e-12);
    assert!(tagging_scores(&scores[..1], &labels[..1]).is_err());
    assert!(tagging_scores(&scores, &labels[..2]).is_err());
}

#[test]
fn reports_and_table() {
    let cfg = MetricConfig::default();
    let beat = BeatAnnotation {
        beats: vec![1.0, 2.0, 3.0],
        downbeats: vec![1.0],
    };
    let est = BeatAnnotation {
        beats: vec![1.05, 2.5],
        downbeats: vec![1.05],
    };
    let r = evaluate_beats(&[(est, beat)], &cfg).unwrap();
    assert!((r.metrics[BEAT_F1] - 0.4).abs() < 1e-15);
    assert_eq!(r.metrics[DOWNBEAT_F1], 1.0);
    assert_eq!(r.counts["beat_fn"], 2);
    let k = evaluate_keys(&[(HarmonyLabel::major(7), HarmonyLabel::major(0)), (HarmonyLabel::major(0), HarmonyLabel::major(0))], &cfg).unwrap();
    assert_eq!(k.metrics[KEY_ACC], 0.75);
    let s = evaluate_structure(
        &[StructureClip {
            est_frames: vec!["verse".into(), "chorus".into()],
            ref_frames: vec!["verse".into(), "verse".into()],
            est_boundaries: vec![10.3, 25.0],
            ref_boundaries: vec![10.0, 20.0],
        }],
        &cfg,
    )
    .unwrap();
    assert_eq!(s.metrics[STRUCTURE_ACC], 0.5);
    assert_eq!(s.metrics[STRUCTURE_HR5F], 0.5);
    assert!(evaluate_chords(&[], &cfg).is_err());

    let mut t = ResultsTable::default();
    t.push("bert-5s-25hz", &[r.clone(), k.clone()]);
    t.push("conformer-30s-75hz", &[s]);
    let text = t.to_text();
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().next().unwrap().contains("Downbeat F1"));
    assert!(text.contains("0.4000") && text.contains("0.7500"));
    let csv = t.to_csv();
    assert_eq!(csv.lines().next().unwrap(), "config,beat_f1,downbeat_f1,chord_acc,structure_acc,structure_hr5f,key_acc,tag_map,tag_auc");
    assert!(csv.lines().nth(1).unwrap().starts_with("bert-5s-25hz,0.4,1,,,,0.75,,"));
    let json = serde_json::to_string(&r).unwrap();
    assert_eq!(serde_json::from_str::<EvalReport>(&json).unwrap(), r);
}
