use ndarray::{Array1, Array2};
use ptd::noisegen::{flip_row, NoiseProjection};
use serde::Deserialize;

#[derive(Deserialize)]
struct Case {
    x: Vec<f64>,
    y: usize,
    q: f64,
    proj: Vec<Vec<Vec<f64>>>,
    row: Vec<f64>,
}

fn matrix(rows: &[Vec<f64>]) -> Array2<f64> {
    let (m, n) = (rows.len(), rows[0].len());
    Array2::from_shape_vec((m, n), rows.concat()).unwrap()
}

#[test]
fn flip_rows_match_reference_values() {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/flip_rows.json")).unwrap();
    let cases: Vec<Case> = serde_json::from_str(&text).unwrap();
    assert!(cases.len() >= 4);
    for (i, case) in cases.iter().enumerate() {
        let proj = NoiseProjection::new(case.proj.iter().map(|w| matrix(w)).collect()).unwrap();
        let row = flip_row(Array1::from(case.x.clone()).view(), case.y, case.q, &proj).unwrap();
        for (j, (&got, &want)) in row.iter().zip(&case.row).enumerate() {
            assert!((got - want).abs() <= 1e-12, "case {i} entry {j}: {got} vs {want}");
        }
    }
}

#[test]
fn two_classes_put_all_flip_mass_on_the_other_label() {
    let proj = NoiseProjection::new(vec![Array2::ones((3, 2)), Array2::ones((3, 2))]).unwrap();
    let row = flip_row(Array1::from(vec![0.5, -2.0, 1.0]).view(), 1, 0.25, &proj).unwrap();
    assert_eq!(row.to_vec(), vec![0.25, 0.75]);
}
