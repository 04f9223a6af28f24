//! Measured bitstring ensembles and their plain-text file format.
//!
//! The on-disk format is one string per line (`g`/`r` or `0`/`1` characters)
//! after a header line `# n_sites=<N> seed=<s>`.

use crate::error::{KzqError, Result};
use std::io::{BufRead, Write};

/// Seeded collection of measured site-occupation strings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShotEnsemble {
    pub n_sites: usize,
    /// One digit per site; 0 is the ground state, nonzero is excited.
    pub shots: Vec<Vec<u8>>,
    pub seed: u64,
    /// Set when a detection-noise channel has been applied.
    pub noisy: bool,
}

impl ShotEnsemble {
    pub fn new(n_sites: usize, shots: Vec<Vec<u8>>, seed: u64) -> Result<Self> {
        if shots.is_empty() {
            return Err(KzqError::Domain("shot ensemble must be nonempty".into()));
        }
        if shots.iter().any(|s| s.len() != n_sites) {
            return Err(KzqError::Domain(format!(
                "all shots must have length {n_sites}"
            )));
        }
        Ok(Self {
            n_sites,
            shots,
            seed,
            noisy: false,
        })
    }

    pub fn len(&self) -> usize {
        self.shots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shots.is_empty()
    }

    /// Mean excitation per site.
    pub fn site_means(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.n_sites];
        for shot in &self.shots {
            for (mi, &s) in m.iter_mut().zip(shot) {
                if s != 0 {
                    *mi += 1.0;
                }
            }
        }
        let n = self.shots.len() as f64;
        m.iter_mut().for_each(|v| *v /= n);
        m
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "# n_sites={} seed={}", self.n_sites, self.seed)?;
        for shot in &self.shots {
            let line: String = shot.iter().map(|&s| if s == 0 { 'g' } else { 'r' }).collect();
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_from(r: impl BufRead) -> Result<Self> {
        let mut n_sites = None;
        let mut seed = 0u64;
        let mut shots = Vec::new();
        let mut saw_header = false;
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('#') {
                saw_header = true;
                for field in line.trim_start_matches('#').split_whitespace() {
                    if let Some(v) = field.strip_prefix("n_sites=") {
                        n_sites = Some(v.parse::<usize>().map_err(|_| KzqError::Parse {
                            line: lineno + 1,
                            msg: format!("invalid n_sites value {v:?}"),
                        })?);
                    } else if let Some(v) = field.strip_prefix("seed=") {
                        seed = v.parse::<u64>().map_err(|_| KzqError::Parse {
                            line: lineno + 1,
                            msg: format!("invalid seed value {v:?}"),
                        })?;
                    }
                }
                continue;
            }
            let shot: Vec<u8> = line
                .chars()
                .map(|c| match c {
                    'g' | '0' => Ok(0u8),
                    'r' | '1' => Ok(1u8),
                    other => Err(KzqError::Parse {
                        line: lineno + 1,
                        msg: format!("unexpected character {other:?}"),
                    }),
                })
                .collect::<Result<_>>()?;
            if let Some(n) = n_sites {
                if shot.len() != n {
                    return Err(KzqError::Parse {
                        line: lineno + 1,
                        msg: format!("shot length {} does not match n_sites={n}", shot.len()),
                    });
                }
            } else {
                n_sites = Some(shot.len());
            }
            shots.push(shot);
        }
        let _ = saw_header;
        let n_sites = n_sites.ok_or(KzqError::Parse {
            line: 0,
            msg: "empty shot file".into(),
        })?;
        if shots.is_empty() {
            return Err(KzqError::Parse {
                line: 0,
                msg: "shot file contains no shots".into(),
            });
        }
        ShotEnsemble::new(n_sites, shots, seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let e = ShotEnsemble::new(4, vec![vec![0, 1, 0, 1], vec![1, 0, 1, 0]], 7).unwrap();
        let mut buf = Vec::new();
        e.write_to(&mut buf).unwrap();
        let back = ShotEnsemble::read_from(&buf[..]).unwrap();
        assert_eq!(back, e);
    }

    #[test]
    fn rejects_empty_and_ragged() {
        assert!(ShotEnsemble::new(3, vec![], 0).is_err());
        assert!(ShotEnsemble::new(3, vec![vec![0, 1]], 0).is_err());
        assert!(ShotEnsemble::read_from(&b""[..]).is_err());
    }

    #[test]
    fn parse_error_carries_line_number() {
        let text = b"# n_sites=3 seed=0\ngrg\ngxg\n";
        match ShotEnsemble::read_from(&text[..]) {
            Err(KzqError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn accepts_binary_digits() {
        let text = b"# n_sites=4 seed=9\n0101\n1010\n";
        let e = ShotEnsemble::read_from(&text[..]).unwrap();
        assert_eq!(e.seed, 9);
        assert_eq!(e.shots[0], vec![0, 1, 0, 1]);
    }
}
