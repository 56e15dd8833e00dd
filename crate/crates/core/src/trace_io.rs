//! Line-oriented text format for coupled traces.
//!
//! ```text
//! # lag=2 tau=5 seed=17
//! 0  3  1
//! 1  0  2
//! ...
//! 6  1  -
//! ```
//!
//! One tab-separated row per `X` index `t` holds `t`, the encoding of `X_t`
//! and the encoding of `Y_t`. The `Y` path is `lag` entries shorter, so the
//! last `lag` rows carry `-` instead. A trace that never met records `tau=-`. State encodings
//! per kernel family:
//!
//! | state | encoding |
//! |---|---|
//! | discrete (`usize`) | decimal integer |
//! | real vector (`Vec<f64>`, `[f64; 2]`) | comma-separated floats, shortest round-trip form |
//! | Ising spins (`Vec<i8>`) | one `+` or `-` per site, row-major |

use std::io::{BufRead, Write};

use crate::coupling::CoupledTrace;
use crate::error::{Error, Result};

/// Text encoding of a chain state.
pub trait StateCodec: Sized {
    fn encode(&self) -> String;
    fn decode(text: &str) -> Result<Self>;
}

impl StateCodec for usize {
    fn encode(&self) -> String {
        self.to_string()
    }

    fn decode(text: &str) -> Result<Self> {
        text.parse()
            .map_err(|_| Error::TraceFormat(format!("bad discrete state {text:?}")))
    }
}

fn encode_reals(xs: &[f64]) -> String {
    xs.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

fn decode_reals(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|v| {
            v.parse::<f64>()
                .map_err(|_| Error::TraceFormat(format!("bad real {v:?}")))
        })
        .collect()
}

impl StateCodec for Vec<f64> {
    fn encode(&self) -> String {
        encode_reals(self)
    }

    fn decode(text: &str) -> Result<Self> {
        decode_reals(text)
    }
}

impl StateCodec for [f64; 2] {
    fn encode(&self) -> String {
        encode_reals(self)
    }

    fn decode(text: &str) -> Result<Self> {
        let v = decode_reals(text)?;
        v.try_into()
            .map_err(|_| Error::TraceFormat(format!("expected two coordinates in {text:?}")))
    }
}

impl StateCodec for Vec<i8> {
    fn encode(&self) -> String {
        self.iter().map(|&s| if s > 0 { '+' } else { '-' }).collect()
    }

    fn decode(text: &str) -> Result<Self> {
        text.chars()
            .map(|c| match c {
                '+' => Ok(1),
                '-' => Ok(-1),
                other => Err(Error::TraceFormat(format!("bad spin {other:?}"))),
            })
            .collect()
    }
}

pub fn write_trace<S: StateCodec, W: Write>(trace: &CoupledTrace<S>, mut out: W) -> std::io::Result<()> {
    let tau = trace.tau().map_or("-".to_string(), |t| t.to_string());
    writeln!(out, "# lag={} tau={} seed={}", trace.lag(), tau, trace.seed())?;
    let y = trace.y_path();
    for (t, x) in trace.x_path().iter().enumerate() {
        let y_text = y.get(t).map_or("-".to_string(), StateCodec::encode);
        writeln!(out, "{t}\t{}\t{y_text}", x.encode())?;
    }
    Ok(())
}

pub fn read_trace<S, R>(input: R) -> Result<CoupledTrace<S>>
where
    S: StateCodec + Clone + PartialEq,
    R: BufRead,
{
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::TraceFormat("empty input".into()))?
        .map_err(|e| Error::TraceFormat(e.to_string()))?;
    let (lag, tau, seed) = parse_header(&header)?;
    let mut x_path = Vec::new();
    let mut y_fields = Vec::new();
    for (row, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::TraceFormat(e.to_string()))?;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::TraceFormat(format!("row {row}: expected three fields")));
        }
        if fields[0].parse::<usize>().ok() != Some(row) {
            return Err(Error::TraceFormat(format!(
                "row {row}: index {:?} out of order",
                fields[0]
            )));
        }
        x_path.push(S::decode(fields[1])?);
        y_fields.push(fields[2].to_string());
    }
    // Y stops exactly `lag` rows before X, so "-" is positional and never
    // confused with a spin string.
    let y_len = y_fields
        .len()
        .checked_sub(lag)
        .ok_or_else(|| Error::TraceFormat("fewer rows than the lag".into()))?;
    if y_fields[y_len..].iter().any(|f| f != "-") {
        return Err(Error::TraceFormat("the last lag rows must have no Y state".into()));
    }
    let y_path = y_fields[..y_len]
        .iter()
        .map(|f| S::decode(f))
        .collect::<Result<Vec<_>>>()?;
    let trace = CoupledTrace::from_parts(x_path, y_path, tau, lag)?;
    Ok(trace.with_seed(seed))
}

fn parse_header(header: &str) -> Result<(usize, Option<usize>, u64)> {
    let rest = header
        .strip_prefix('#')
        .ok_or_else(|| Error::TraceFormat("missing header line".into()))?;
    let (mut lag, mut tau, mut seed) = (None, None, None);
    for field in rest.split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| Error::TraceFormat(format!("bad header field {field:?}")))?;
        let bad = || Error::TraceFormat(format!("bad header value {field:?}"));
        match key {
            "lag" => lag = Some(value.parse().map_err(|_| bad())?),
            "tau" => {
                tau = Some(if value == "-" {
                    None
                } else {
                    Some(value.parse().map_err(|_| bad())?)
                })
            }
            "seed" => seed = Some(value.parse().map_err(|_| bad())?),
            _ => return Err(Error::TraceFormat(format!("unknown header key {key:?}"))),
        }
    }
    match (lag, tau, seed) {
        (Some(l), Some(t), Some(s)) => Ok((l, t, s)),
        _ => Err(Error::TraceFormat("header needs lag, tau and seed".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::{run_lagged_coupling, LagConfig, PointMass};
    use crate::kernels::{CoupledIsingSsg, DiscreteMatrixKernel, TransitionMatrix, UniformSpins};
    use crate::rng::stream;

    fn round_trip<S: StateCodec + Clone + PartialEq + std::fmt::Debug>(trace: &CoupledTrace<S>) {
        let mut buf = Vec::new();
        write_trace(trace, &mut buf).unwrap();
        let back: CoupledTrace<S> = read_trace(buf.as_slice()).unwrap();
        assert_eq!(&back, trace);
    }

    #[test]
    fn discrete_round_trip() {
        let m = TransitionMatrix::new(vec![vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap();
        let kernel = DiscreteMatrixKernel::new(m).unwrap();
        let config = LagConfig::new(2, 1000, PointMass(0usize)).unwrap().with_horizon(12);
        let trace = run_lagged_coupling(&kernel, &config, &mut stream(4, &[]))
            .unwrap()
            .with_seed(99);
        round_trip(&trace);
    }

    #[test]
    fn real_round_trip_is_exact() {
        let x = vec![vec![0.1, -2.5e-300], vec![1.0 / 3.0, 7.0], vec![2.0, 2.0]];
        let y = vec![vec![0.2, 0.3], vec![2.0, 2.0]];
        let trace = CoupledTrace::from_parts(x, y, Some(2), 1).unwrap();
        round_trip(&trace);
    }

    #[test]
    fn ising_round_trip() {
        let kernel = CoupledIsingSsg::new(2, 0.3).unwrap();
        let config = LagConfig::new(1, 1000, UniformSpins { sites: 4 })
            .unwrap()
            .with_horizon(6);
        let trace = run_lagged_coupling(&kernel, &config, &mut stream(8, &[])).unwrap();
        round_trip(&trace);
    }

    #[test]
    fn single_site_minus_is_a_state() {
        let x: Vec<Vec<i8>> = vec![vec![1], vec![1], vec![-1]];
        let y: Vec<Vec<i8>> = vec![vec![-1], vec![-1]];
        let trace = CoupledTrace::from_parts(x, y, Some(2), 1).unwrap();
        round_trip(&trace);
    }

    #[test]
    fn format_errors() {
        let bad: [&str; 5] = [
            "",
            "lag=1 tau=1 seed=0\n",
            "# lag=1 tau=1\n0\t0\t0\n1\t0\t-\n",
            "# lag=1 tau=1 seed=0\n0\t0\n",
            "# lag=1 tau=1 seed=0\n1\t0\t0\n0\t0\t-\n",
        ];
        for text in bad {
            assert!(read_trace::<usize, _>(text.as_bytes()).is_err(), "{text:?}");
        }
        let good = "# lag=1 tau=1 seed=5\n0\t0\t0\n1\t0\t-\n";
        let trace = read_trace::<usize, _>(good.as_bytes()).unwrap();
        assert_eq!(trace.tau(), Some(1));
        assert_eq!(trace.seed(), 5);
    }
}
