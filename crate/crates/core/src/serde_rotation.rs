//! Serializes a `Matrix3<f64>` as three rows, `[[r00, r01, r02], ...]`.

use nalgebra::Matrix3;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub fn serialize<S: Serializer>(m: &Matrix3<f64>, s: S) -> Result<S::Ok, S::Error> {
    let rows: [[f64; 3]; 3] = [
        [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
        [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
        [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
    ];
    rows.serialize(s)
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Matrix3<f64>, D::Error> {
    let rows = <[[f64; 3]; 3]>::deserialize(d)?;
    Ok(Matrix3::from_fn(|i, j| rows[i][j]))
}
