use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

use super::sweep::{PointStatus, SweepRecord};

/// Shortest decimal form of `x` with at most 12 significant digits, in the
/// style of C's `%.12g`.
pub fn format_number(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.11e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..12).contains(&exp) {
        let decimals = (11 - exp) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        format!("{}e{}{:02}", trim_zeros(mantissa.to_string()), if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// Header row: `p, q, phi, theta, R, W`, then `s_, m_, theta_, U_` for each
/// provider in id order, then the status columns.
pub fn header(ids: &[String]) -> Vec<String> {
    let mut cols: Vec<String> = ["p", "q", "phi", "theta", "R", "W"].map(String::from).to_vec();
    for id in sorted(ids).into_iter().map(|k| &ids[k]) {
        for prefix in ["s", "m", "theta", "U"] {
            cols.push(format!("{prefix}_{id}"));
        }
    }
    cols.extend(["status", "iterations", "max_kkt", "message"].map(String::from));
    cols
}

fn sorted(ids: &[String]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| ids[a].cmp(&ids[b]));
    order
}

fn row(record: &SweepRecord, order: &[usize]) -> Vec<String> {
    let f = format_number;
    let mut cells = vec![f(record.p), f(record.q)];
    let ok = record.status != PointStatus::Failed;
    let num = |x: f64| if ok { f(x) } else { String::new() };
    cells.extend([num(record.phi), num(record.theta), num(record.revenue), num(record.welfare)]);
    for &k in order {
        for col in [&record.subsidies, &record.populations, &record.throughputs, &record.utilities] {
            cells.push(col.get(k).map(|x| num(*x)).unwrap_or_default());
        }
    }
    cells.push(record.status.as_str().to_string());
    cells.push(record.iterations.to_string());
    cells.push(num(record.max_kkt));
    cells.push(record.message.clone().unwrap_or_default());
    cells
}

/// Writes the records as CSV to `out`.
pub fn write_csv<W: Write>(records: &[SweepRecord], ids: &[String], out: W) -> Result<()> {
    if records.is_empty() {
        return Err(Error::domain("no records to write"));
    }
    let order = sorted(ids);
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(header(ids)).map_err(csv_err)?;
    for r in records {
        w.write_record(row(r, &order)).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the records as CSV to the file at `path`.
pub fn emit_csv(records: &[SweepRecord], ids: &[String], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv(records, ids, std::io::BufWriter::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_significant_digits() {
        assert_eq!(format_number(0.0), "0");
        assert_eq!(format_number(-0.0), "0");
        assert_eq!(format_number(1.0), "1");
        assert_eq!(format_number(0.1), "0.1");
        assert_eq!(format_number(1.0 / 3.0), "0.333333333333");
        assert_eq!(format_number(2.0 / 3.0 * 1e-7), "6.66666666667e-08");
        assert_eq!(format_number(123456789012345.0), "1.23456789012e+14");
        assert_eq!(format_number(-2.5), "-2.5");
        assert_eq!(format_number(0.278464542761074), "0.278464542761");
        assert_eq!(format_number(99999999999.99), "100000000000");
    }
}
