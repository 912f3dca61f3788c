use nalgebra::DMatrix;

use super::{DynamicsError, Trajectory};

/// Writes `t,x0,...,x{n-1}` CSV at full precision.
pub fn write_csv(traj: &Trajectory) -> String {
    let n = traj.dimension();
    let mut out = String::from("t");
    for i in 0..n {
        out.push_str(&format!(",x{i}"));
    }
    out.push('\n');
    for (k, t) in traj.times().iter().enumerate() {
        out.push_str(&t.to_string());
        for j in 0..n {
            out.push(',');
            out.push_str(&traj.states()[(k, j)].to_string());
        }
        out.push('\n');
    }
    out
}

/// Reads a trajectory written by [`write_csv`] (or any CSV with the same header).
pub fn read_csv(text: &str) -> Result<Trajectory, DynamicsError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| DynamicsError::Csv(e.to_string()))?
        .clone();
    let n = headers.len().saturating_sub(1);
    let header_ok = n >= 1
        && &headers[0] == "t"
        && (0..n).all(|i| headers[i + 1] == format!("x{i}"));
    if !header_ok {
        return Err(DynamicsError::Csv(format!(
            "expected header t,x0,...; got {}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| DynamicsError::Csv(e.to_string()))?;
        if record.len() != n + 1 {
            return Err(DynamicsError::Csv(format!(
                "row {} has {} fields, expected {}",
                line + 1,
                record.len(),
                n + 1
            )));
        }
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| DynamicsError::Csv(format!("row {}: bad number {s:?}", line + 1)))
        };
        times.push(parse(&record[0])?);
        for field in record.iter().skip(1) {
            values.push(parse(field)?);
        }
    }
    let k = times.len();
    Trajectory::new(times, DMatrix::from_row_slice(k, n, &values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_exactly() {
        let states = DMatrix::from_row_slice(3, 2, &[0.1, -2.5, 1.0 / 3.0, 7e-12, 4.0, 1e300]);
        let t = Trajectory::new(vec![0.0, 0.002, 0.004], states).unwrap();
        let text = write_csv(&t);
        assert!(text.starts_with("t,x0,x1\n"));
        assert_eq!(read_csv(&text).unwrap(), t);
    }

    #[test]
    fn rejects_bad_header() {
        assert!(read_csv("time,a\n0,1\n").is_err());
        assert!(read_csv("t,x1\n0,1\n").is_err());
    }
}
