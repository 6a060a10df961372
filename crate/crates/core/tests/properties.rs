use pamm_core::basis::{basis_penalty, matrix_smooth_design, BSplineBasis};
use pamm_core::formula::{
    parse_hazard_expression, parse_model_formula, parse_transform_formula, FormulaError, LagLeadSpec, PartialEffect,
};
use pamm_core::frame::{Column, Frame};
use pamm_core::ped::{as_ped, make_lag_lead, CutPoints, SurvDataset};
use pamm_core::simulate::{rpexp_inverse, PexpDist};
use nalgebra::DMatrix;
use proptest::prelude::*;

const VARS: [&str; 7] = ["x1", "x2", "age", "z.tz", "tz_latency", "LL", "sex"];

fn var() -> impl Strategy<Value = String> {
    prop::sample::select(&VARS[..]).prop_map(str::to_string)
}

fn num() -> impl Strategy<Value = String> {
    prop_oneof![(0u32..100).prop_map(|v| v.to_string()), (0u32..1000).prop_map(|v| format!("{}.{}", v / 10, v % 10))]
}

fn model_term() -> impl Strategy<Value = String> {
    let by = prop_oneof![
        Just(String::new()),
        var().prop_map(|v| format!(", by = {v}")),
        (var(), var()).prop_map(|(a, b)| format!(", by = {a} * {b}")),
    ];
    prop_oneof![
        var(),
        (var(), var()).prop_map(|(a, b)| format!("{a}:{b}")),
        (var(), by.clone(), prop::option::of(3usize..20)).prop_map(|(v, by, k)| match k {
            Some(k) => format!("s({v}{by}, k = {k})"),
            None => format!("s({v}{by})"),
        }),
        (var(), var(), by, 3usize..8, 3usize..8).prop_map(|(a, b, by, k1, k2)| format!("te({a}, {b}{by}, k = c({k1}, {k2}))")),
    ]
}

fn model_text() -> impl Strategy<Value = String> {
    prop::collection::vec(model_term(), 1..5).prop_map(|t| format!("ped_status ~ {}", t.join(" + ")))
}

fn hazard_expr() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![num(), var().prop_filter("numeric", |v| v != "sex"), Just("t".to_string()), Just("f0(t)".to_string())];
    leaf.prop_recursive(4, 24, 3, |inner| {
        prop_oneof![
            (inner.clone(), prop::sample::select(vec!["+", "-", "*", "/", "^"]), inner.clone())
                .prop_map(|(a, op, b)| format!("({a} {op} {b})")),
            inner.clone().prop_map(|a| format!("-{a}")),
            (prop::sample::select(vec!["sqrt", "log", "exp"]), inner.clone()).prop_map(|(f, a)| format!("{f}({a})")),
            (inner.clone(), num(), num()).prop_map(|(a, m, s)| format!("dnorm({a}, {m}, {s})")),
        ]
    })
}

fn laglead() -> impl Strategy<Value = String> {
    prop_oneof![
        Just("default".to_string()),
        num().prop_map(|l| format!("lagged({l})")),
        (num(), 1u32..30).prop_map(|(l, d)| format!("window({l}, {d})")),
    ]
}

fn hazard_text() -> impl Strategy<Value = String> {
    let node = (prop::sample::select(vec!["f_wce", "f_dlnm", "f_elra"]), laglead())
        .prop_map(|(f, ll)| format!("fcumu(t, tz, z.tz, f_xyz = {f}, ll_fun = {ll})"));
    (hazard_expr(), prop::collection::vec(node, 0..3)).prop_map(|(e, nodes)| {
        if nodes.is_empty() {
            format!("~ {e}")
        } else {
            format!("~ {e} | {}", nodes.join(" + "))
        }
    })
}

fn transform_text() -> impl Strategy<Value = String> {
    let keep = prop_oneof![Just(".".to_string()), prop::collection::vec(var(), 1..4).prop_map(|v| v.join(" + "))];
    // `None` stands for the term's own tz_var, wrapped in latency()
    let cumu = (prop::collection::vec(prop::option::of(var()), 1..4), laglead());
    (keep, prop::collection::vec(cumu, 0..3), any::<bool>()).prop_map(|(keep, cumus, conc)| {
        let mut specials: Vec<String> = cumus
            .into_iter()
            .enumerate()
            .map(|(i, (comps, ll))| {
                let c: Vec<String> =
                    comps.into_iter().map(|n| n.unwrap_or_else(|| format!("latency(tz{i})"))).collect();
                format!("cumulative({}, tz_var = \"tz{i}\", ll_fun = {ll})", c.join(", "))
            })
            .collect();
        if conc {
            specials.push("concurrent(bili, tz_var = \"day\")".to_string());
        }
        if specials.is_empty() {
            format!("Surv(time, status) ~ {keep}")
        } else {
            format!("Surv(time, status) ~ {keep} | {}", specials.join(" + "))
        }
    })
}

fn is_ident(c: u8) -> bool {
    c.is_ascii_alphanumeric() || c == b'.' || c == b'_'
}

fn token_start(text: &[u8], i: usize) -> usize {
    // a quoted string is one token
    let mut open = None;
    for (j, &b) in text.iter().enumerate() {
        if b == b'"' {
            match open {
                None => open = Some(j),
                Some(o) if i >= o && i <= j => return o,
                Some(_) => open = None,
            }
        }
    }
    if let Some(o) = open.filter(|&o| i >= o) {
        return o;
    }
    let mut s = i;
    if is_ident(text[i]) {
        while s > 0 && is_ident(text[s - 1]) {
            s -= 1;
        }
    }
    s
}

fn previous_token_start(text: &[u8], start: usize) -> usize {
    let mut j = start;
    while j > 0 && text[j - 1] == b' ' {
        j -= 1;
    }
    if j == 0 {
        0
    } else {
        token_start(text, j - 1)
    }
}

fn check_corruption<T>(text: &str, i: usize, c: u8, parse: impl Fn(&str) -> Result<T, FormulaError>) {
    let mut bytes = text.as_bytes().to_vec();
    let i = i % bytes.len();
    let orig = bytes.clone();
    bytes[i] = c;
    let corrupted = String::from_utf8(bytes.clone()).unwrap();
    let first = parse(&corrupted).err().map(|e| e.to_string());
    assert_eq!(first, parse(&corrupted).err().map(|e| e.to_string()), "parse is deterministic");
    if let Err(e) = parse(&corrupted) {
        if let Some(p) = e.position() {
            // a corruption may reinterpret its left neighbour (`a,` -> `a=`)
            let start = previous_token_start(&orig, token_start(&orig, i).min(token_start(&bytes, i)));
            assert!(p >= start, "{corrupted:?}: error at {p} before corrupted token at {start}: {e}");
        }
    }
}

const CORRUPT: &[u8] = b"()[],=+-*/^~|:.x1 \"";

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn model_formula_round_trip(text in model_text()) {
        let a = parse_model_formula(&text).unwrap();
        let b = parse_model_formula(&a.to_string()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn hazard_round_trip(text in hazard_text()) {
        let a = parse_hazard_expression(&text).unwrap();
        let b = parse_hazard_expression(&a.to_string()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn transform_round_trip(text in transform_text()) {
        let a = parse_transform_formula(&text).unwrap();
        let b = parse_transform_formula(&a.to_string()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn corrupted_formulas_fail_at_or_after_the_corruption(
        model in model_text(),
        hazard in hazard_text(),
        transform in transform_text(),
        i in any::<usize>(),
        c in prop::sample::select(CORRUPT),
    ) {
        check_corruption(&model, i, c, parse_model_formula);
        check_corruption(&hazard, i, c, parse_hazard_expression);
        check_corruption(&transform, i, c, parse_transform_formula);
    }
}

#[derive(Debug, Clone)]
struct Case {
    time: Vec<f64>,
    status: Vec<u8>,
    cuts: Vec<f64>,
}

fn case() -> impl Strategy<Value = Case> {
    let cuts = prop::collection::vec(0.1f64..3.0, 1..=10).prop_map(|steps| {
        let mut c = vec![0.0];
        for s in steps {
            c.push(c.last().unwrap() + s);
        }
        c
    });
    (prop::collection::vec((0.05f64..25.0, 0u8..2), 1..=20), cuts).prop_map(|(subjects, cuts)| {
        let (time, status) = subjects.into_iter().unzip();
        Case { time, status, cuts }
    })
}

fn ped_of(c: &Case, cuts: &[f64]) -> pamm_core::ped::PedDataset {
    let n = c.time.len();
    let mut cov = Frame::new(n);
    cov.insert("x", Column::Numeric((0..n).map(|i| i as f64).collect()));
    let data = SurvDataset::new((1..=n as i64).collect(), c.time.clone(), c.status.clone(), cov).unwrap();
    let spec = parse_transform_formula("Surv(time, status) ~ .").unwrap();
    as_ped(&data, &spec, Some(&CutPoints::new(cuts.to_vec()).unwrap()), None).unwrap()
}

fn per_subject_totals(ped: &pamm_core::ped::PedDataset, n: usize) -> Vec<(f64, u32)> {
    let mut out = vec![(0.0, 0); n];
    for r in 0..ped.nrows() {
        let s = &mut out[ped.ids[r] as usize - 1];
        s.0 += ped.offset[r].exp();
        s.1 += ped.ped_status[r] as u32;
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn ped_exposure_and_events_are_conserved(c in case()) {
        let ped = ped_of(&c, &c.cuts);
        let last = *c.cuts.last().unwrap();
        for (i, (exposure, events)) in per_subject_totals(&ped, c.time.len()).into_iter().enumerate() {
            let expected = c.time[i].min(last);
            prop_assert!((exposure - expected).abs() <= 1e-12 * expected.max(1.0));
            let event = u32::from(c.status[i] == 1 && c.time[i] <= last);
            prop_assert_eq!(events, event);
        }
    }

    #[test]
    fn refining_cuts_keeps_subject_totals(c in case(), extra in prop::collection::vec(0.0f64..1.0, 1..6)) {
        let last = *c.cuts.last().unwrap();
        let mut fine = c.cuts.clone();
        fine.extend(extra.iter().map(|u| u * last).filter(|v| *v > 0.0 && *v < last));
        fine.sort_by(f64::total_cmp);
        fine.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
        let coarse = per_subject_totals(&ped_of(&c, &c.cuts), c.time.len());
        let refined = per_subject_totals(&ped_of(&c, &fine), c.time.len());
        for (a, b) in coarse.iter().zip(&refined) {
            prop_assert!((a.0 - b.0).abs() <= 1e-9 * a.0.max(1.0));
            prop_assert_eq!(a.1, b.1);
        }
    }

    #[test]
    fn split_matches_naive_loop(c in case()) {
        let ped = ped_of(&c, &c.cuts);
        let mut rows = Vec::new();
        for (i, &t) in c.time.iter().enumerate() {
            for w in c.cuts.windows(2) {
                if t <= w[0] {
                    break;
                }
                let end = t.min(w[1]);
                let status = u8::from(c.status[i] == 1 && t <= w[1]);
                rows.push((i as i64 + 1, w[0], w[1], (end - w[0]).ln(), status));
            }
        }
        prop_assert_eq!(rows.len(), ped.nrows());
        for (r, row) in rows.iter().enumerate() {
            prop_assert_eq!(row.0, ped.ids[r]);
            prop_assert_eq!(row.1, ped.tstart[r]);
            prop_assert_eq!(row.2, ped.tend[r]);
            prop_assert!((row.3 - ped.offset[r]).abs() < 1e-12);
            prop_assert_eq!(row.4, ped.ped_status[r]);
        }
    }

    #[test]
    fn open_window_dominates_bounded_window(lag in 0.0f64..3.0, lead in 0.1f64..6.0, step in 0.2f64..1.0) {
        let cuts = CutPoints::seq(0.0, 10.0, 1.0).unwrap();
        let grid: Vec<f64> = (0..).map(|q| -3.0 + q as f64 * step).take_while(|v| *v <= 10.0).collect();
        let open = make_lag_lead(&cuts, &grid, LagLeadSpec::lagged(lag).unwrap());
        let bounded = make_lag_lead(&cuts, &grid, LagLeadSpec::window(lag, lead).unwrap());
        for (o, b) in open.weights.iter().zip(bounded.weights.iter()) {
            prop_assert!(*o >= *b && *b >= 0.0);
        }
    }

    #[test]
    fn bspline_rows_sum_to_one(xs in prop::collection::vec(-5.0f64..5.0, 12..40), probe in 0.0f64..1.0, k in 5usize..12) {
        let basis = BSplineBasis::from_data(&xs, k, 3);
        prop_assume!(basis.is_ok());
        let basis = basis.unwrap();
        let x = basis.lower() + probe * (basis.upper() - basis.lower());
        let row = basis.row(x);
        prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(row.iter().all(|v| *v >= -1e-15));
        let pen = basis_penalty(&basis, 2).unwrap();
        let eig = pen.s.clone().symmetric_eigen();
        let scale = eig.eigenvalues.amax().max(1.0);
        prop_assert!(eig.eigenvalues.iter().all(|e| *e >= -1e-10 * scale));
    }

    #[test]
    fn matrix_design_is_linear_in_weights(seed in any::<u64>(), a in -3.0f64..3.0) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let (n, q) = (6, 5);
        let x = DMatrix::from_fn(n, q, |_, _| rng.random::<f64>() * 4.0);
        let w1 = DMatrix::from_fn(n, q, |_, _| rng.random::<f64>());
        let w2 = DMatrix::from_fn(n, q, |_, _| rng.random::<f64>() - 0.5);
        let basis = BSplineBasis::from_data(x.as_slice(), 6, 3).unwrap();
        let combined = matrix_smooth_design(&x, &(&w1 * a + &w2), &basis).unwrap().columns;
        let d1 = matrix_smooth_design(&x, &w1, &basis).unwrap().columns;
        let d2 = matrix_smooth_design(&x, &w2, &basis).unwrap().columns;
        let diff = (combined - (d1 * a + d2)).amax();
        prop_assert!(diff < 1e-12);
    }

    #[test]
    fn inversion_recovers_cumulative_hazard(
        steps in prop::collection::vec(0.1f64..3.0, 1..8),
        rates in prop::collection::vec(0.01f64..5.0, 8),
        u in 1e-9f64..1.0,
    ) {
        let mut cuts = vec![0.0];
        for s in &steps {
            cuts.push(cuts.last().unwrap() + s);
        }
        let j = steps.len();
        let dist = PexpDist::new(CutPoints::new(cuts).unwrap(), rates[..j].to_vec()).unwrap();
        let t = rpexp_inverse(&dist, u);
        if t.is_finite() {
            prop_assert!((dist.cumulative_hazard(t) + u.ln()).abs() < 1e-10 * (1.0 + u.ln().abs()));
        } else {
            prop_assert!(-u.ln() > dist.cumulative_hazard(dist.cuts.last()));
        }
    }

    #[test]
    fn builtin_effect_anchors(t in -10.0f64..50.0, tz in -10.0f64..50.0, z in -5.0f64..5.0) {
        prop_assert_eq!(PartialEffect::Dlnm.eval(t, tz, -1.0), 0.0);
        prop_assert_eq!(PartialEffect::Elra.eval(5.0, tz, z), 0.0);
        prop_assert_eq!(PartialEffect::Wce.eval(t, tz, 2.0 * z), 2.0 * PartialEffect::Wce.eval(t, tz, z));
    }
}
