//! Reference landmark selection.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::Location;
use crate::io::{read_numeric_csv, CsvWriter};

/// Farthest-point sampling with a seeded random first landmark.
pub fn greedy_sample(locations: &[Location], k: usize, seed: u64) -> Result<Vec<usize>> {
    if locations.is_empty() {
        return Err(Error::invalid("no locations to sample from"));
    }
    let first = ChaCha8Rng::seed_from_u64(seed).random_range(0..locations.len());
    greedy_sample_from(locations, k, first)
}

/// Farthest-point sampling from a fixed first landmark. Each new landmark
/// maximises the distance to its closest already selected landmark; ties go
/// to the smallest index.
pub fn greedy_sample_from(locations: &[Location], k: usize, first: usize) -> Result<Vec<usize>> {
    let n = locations.len();
    if k < 1 || k > n {
        return Err(Error::invalid(format!(
            "cannot select {k} landmarks out of {n} locations"
        )));
    }
    if first >= n {
        return Err(Error::invalid(format!(
            "first landmark {first} out of range"
        )));
    }
    let mut selected = Vec::with_capacity(k);
    let mut chosen = vec![false; n];
    let mut nearest: Vec<f64> = locations
        .iter()
        .map(|p| p.sq_dist(&locations[first]))
        .collect();
    selected.push(first);
    chosen[first] = true;
    while selected.len() < k {
        let mut best: Option<usize> = None;
        for i in 0..n {
            if chosen[i] {
                continue;
            }
            match best {
                Some(b) if nearest[b] >= nearest[i] => {}
                _ => best = Some(i),
            }
        }
        let next = best.expect("k <= n leaves an unselected point");
        selected.push(next);
        chosen[next] = true;
        for (d, p) in nearest.iter_mut().zip(locations) {
            *d = d.min(p.sq_dist(&locations[next]));
        }
    }
    Ok(selected)
}

/// Sequential selection along a trajectory: the first pose, then every pose
/// at least `r_lm` away from the previously selected one.
pub fn threshold_sample(locations: &[Location], r_lm: f64) -> Result<Vec<usize>> {
    if locations.is_empty() {
        return Err(Error::invalid("no locations to sample from"));
    }
    if !(r_lm > 0.0) {
        return Err(Error::invalid("r_lm must be > 0"));
    }
    let mut selected = vec![0];
    let mut last = locations[0];
    for (i, p) in locations.iter().enumerate().skip(1) {
        if p.sq_dist(&last) >= r_lm * r_lm {
            selected.push(i);
            last = *p;
        }
    }
    Ok(selected)
}

/// Writes `index,x,y` rows for the selected landmarks.
pub fn write_landmarks(path: &Path, indices: &[usize], locations: &[Location]) -> Result<()> {
    let mut w = CsvWriter::new(&["index", "x", "y"]);
    for &i in indices {
        let p = locations[i];
        w.row(&[i.to_string(), p.x.to_string(), p.y.to_string()]);
    }
    w.write(path)
}

/// Reads the landmark indices back from a file written by [`write_landmarks`].
pub fn read_landmarks(path: &Path) -> Result<Vec<usize>> {
    let (header, rows) = read_numeric_csv(path)?;
    if header.first().map(String::as_str) != Some("index") {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "expected an `index` column first".into(),
        });
    }
    rows.iter()
        .enumerate()
        .map(|(k, r)| {
            let v = r[0];
            if v < 0.0 || v.fract() != 0.0 {
                Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: k + 2,
                    message: format!("invalid landmark index {v}"),
                })
            } else {
                Ok(v as usize)
            }
        })
        .collect()
}
