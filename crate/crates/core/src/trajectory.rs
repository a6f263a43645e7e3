//! Teacher training trajectories and the `HCTRAJ` text format.
//!
//! A trajectory holds, for every user, the teacher's top-K ranking of
//! unobserved items at `E` checkpoints (earliest first), the rank-std of each
//! ranked item, and the converged teacher's ranking of the user's observed
//! items.
//!
//! ```text
//! HCTRAJ v1 teacher=<kind> E=<E> K=<K> users=<U>
//! u <id>
//! e <e>            (e = 1..E)
//! <K item ids in rank order>
//! <K rank-std values aligned with the ids>
//! obs
//! <observed item ids in rank order>
//! <rank-std values aligned with the ids>
//! ```
//!
//! Floats are written in shortest round-trip form, so reading and writing a
//! file reproduces it byte for byte. Externally trained teachers can be
//! ingested by emitting this format.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// One checkpoint: per-user top-K lists with aligned rank-std values.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub lists: Vec<Vec<usize>>,
    pub rank_std: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherTrajectory {
    /// Teacher label, e.g. `mf`, `ml`, `dnn`, or an external model name.
    pub teacher: String,
    pub k: usize,
    pub num_users: usize,
    /// Checkpoints in training order; the last one is the converged state.
    pub checkpoints: Vec<Checkpoint>,
    /// Converged ranking of each user's observed items.
    pub observed: Vec<Vec<usize>>,
    pub observed_std: Vec<Vec<f64>>,
}

impl TeacherTrajectory {
    pub fn num_checkpoints(&self) -> usize {
        self.checkpoints.len()
    }

    /// Ranking of user `u` at checkpoint `e` (1-based, as in `v`).
    pub fn list(&self, e: usize, u: usize) -> &[usize] {
        &self.checkpoints[e - 1].lists[u]
    }

    pub fn stds(&self, e: usize, u: usize) -> &[f64] {
        &self.checkpoints[e - 1].rank_std[u]
    }

    pub fn final_checkpoint(&self) -> &Checkpoint {
        self.checkpoints.last().expect("trajectory has checkpoints")
    }

    /// Stored entries for user `u`: `K·E + |P⁺_u|` when every list is full.
    pub fn storage_entries(&self, u: usize) -> usize {
        self.checkpoints.iter().map(|c| c.lists[u].len()).sum::<usize>() + self.observed[u].len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::TrajectoryMismatch(m));
        if self.checkpoints.is_empty() {
            return bad("trajectory has no checkpoints".into());
        }
        if self.observed.len() != self.num_users || self.observed_std.len() != self.num_users {
            return bad("observed rankings do not cover every user".into());
        }
        for (e, c) in self.checkpoints.iter().enumerate() {
            if c.lists.len() != self.num_users || c.rank_std.len() != self.num_users {
                return bad(format!("checkpoint {} does not cover every user", e + 1));
            }
            for (u, (l, s)) in c.lists.iter().zip(&c.rank_std).enumerate() {
                if l.len() != s.len() || l.len() > self.k || l.is_empty() {
                    return bad(format!("checkpoint {} user {u}: malformed list", e + 1));
                }
            }
        }
        for (u, (l, s)) in self.observed.iter().zip(&self.observed_std).enumerate() {
            if l.len() != s.len() {
                return bad(format!("user {u}: observed ranking and std lengths differ"));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "HCTRAJ v1 teacher={} E={} K={} users={}",
            self.teacher,
            self.checkpoints.len(),
            self.k,
            self.num_users
        );
        for u in 0..self.num_users {
            let _ = writeln!(out, "u {u}");
            for (e, c) in self.checkpoints.iter().enumerate() {
                let _ = writeln!(out, "e {}", e + 1);
                push_row(&mut out, &c.lists[u]);
                push_row(&mut out, &c.rank_std[u]);
            }
            out.push_str("obs\n");
            push_row(&mut out, &self.observed[u]);
            push_row(&mut out, &self.observed_std[u]);
        }
        out
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut r = LineReader {
            lines: text.lines().enumerate(),
            origin,
            last: 0,
        };

        let header = r.next_line("header")?;
        let mut fields = header.split_whitespace();
        if fields.next() != Some("HCTRAJ") || fields.next() != Some("v1") {
            return Err(r.error("expected `HCTRAJ v1` header"));
        }
        let (mut teacher, mut e_count, mut k, mut users) = (None, None, None, None);
        for f in fields {
            match f.split_once('=') {
                Some(("teacher", v)) => teacher = Some(v.to_string()),
                Some(("E", v)) => e_count = v.parse::<usize>().ok(),
                Some(("K", v)) => k = v.parse::<usize>().ok(),
                Some(("users", v)) => users = v.parse::<usize>().ok(),
                _ => return Err(r.error(&format!("unexpected header field {f:?}"))),
            }
        }
        let (Some(teacher), Some(e_count), Some(k), Some(num_users)) = (teacher, e_count, k, users)
        else {
            return Err(r.error("header needs teacher, E, K and users"));
        };
        if e_count == 0 {
            return Err(r.error("E must be at least 1"));
        }

        let mut checkpoints = vec![
            Checkpoint {
                lists: Vec::with_capacity(num_users),
                rank_std: Vec::with_capacity(num_users),
            };
            e_count
        ];
        let mut observed = Vec::with_capacity(num_users);
        let mut observed_std = Vec::with_capacity(num_users);
        for u in 0..num_users {
            r.expect(&format!("u {u}"))?;
            for (e, cp) in checkpoints.iter_mut().enumerate() {
                r.expect(&format!("e {}", e + 1))?;
                cp.lists.push(r.row("checkpoint ids")?);
                cp.rank_std.push(r.row("checkpoint rank-std")?);
            }
            r.expect("obs")?;
            observed.push(r.row("observed ids")?);
            observed_std.push(r.row("observed rank-std")?);
        }
        while let Some((n, l)) = r.lines.next() {
            if !l.trim().is_empty() {
                return Err(Error::parse(origin, n + 1, format!("trailing content {l:?}")));
            }
        }
        let traj = Self {
            teacher,
            k,
            num_users,
            checkpoints,
            observed,
            observed_std,
        };
        traj.validate()?;
        Ok(traj)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }
}

fn push_row<T: std::fmt::Display>(out: &mut String, row: &[T]) {
    for (i, v) in row.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{v}");
    }
    out.push('\n');
}

struct LineReader<'a, I> {
    lines: I,
    origin: &'a Path,
    last: usize,
}

impl<'a, I: Iterator<Item = (usize, &'a str)>> LineReader<'a, I> {
    fn error(&self, message: &str) -> Error {
        Error::parse(self.origin, self.last, message)
    }

    fn next_line(&mut self, what: &str) -> Result<&'a str> {
        match self.lines.next() {
            Some((n, l)) => {
                self.last = n + 1;
                Ok(l)
            }
            None => Err(self.error(&format!("unexpected end of file, wanted {what}"))),
        }
    }

    fn expect(&mut self, want: &str) -> Result<()> {
        let l = self.next_line(want)?;
        if l.trim() != want {
            return Err(self.error(&format!("expected {want:?}, found {l:?}")));
        }
        Ok(())
    }

    fn row<T: std::str::FromStr>(&mut self, what: &str) -> Result<Vec<T>> {
        let l = self.next_line(what)?;
        l.split_whitespace()
            .map(|tok| tok.parse::<T>().map_err(|_| self.error(&format!("cannot parse {tok:?}"))))
            .collect()
    }
}

/// Checks that a set of trajectories agrees with a dataset of `num_users`
/// users and shares one K; returns a readable diff when it does not.
pub fn check_compatible(trajectories: &[TeacherTrajectory], num_users: usize) -> Result<()> {
    if trajectories.is_empty() {
        return Err(Error::TrajectoryMismatch("no trajectories supplied".into()));
    }
    let mut problems = Vec::new();
    for (x, t) in trajectories.iter().enumerate() {
        if t.num_users != num_users {
            problems.push(format!(
                "teacher #{x} ({}) covers {} users, dataset has {num_users}",
                t.teacher, t.num_users
            ));
        }
    }
    if !problems.is_empty() {
        return Err(Error::TrajectoryMismatch(problems.join("; ")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny() -> TeacherTrajectory {
        TeacherTrajectory {
            teacher: "mf".into(),
            k: 3,
            num_users: 2,
            checkpoints: vec![
                Checkpoint {
                    lists: vec![vec![4, 5, 6], vec![1, 2, 3]],
                    rank_std: vec![vec![0.0, 0.4472135954999579, 1.0], vec![0.0; 3]],
                },
                Checkpoint {
                    lists: vec![vec![6, 5, 4], vec![3, 2, 1]],
                    rank_std: vec![vec![0.1, 0.2, 0.30000000000000004], vec![0.0; 3]],
                },
            ],
            observed: vec![vec![0, 1], vec![5]],
            observed_std: vec![vec![0.0, 0.5], vec![0.0]],
        }
    }

    #[test]
    fn text_round_trip_is_exact() {
        let t = tiny();
        let text = t.to_text();
        let back = TeacherTrajectory::parse(&text, Path::new("t")).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_text(), text);
        assert!(text.starts_with("HCTRAJ v1 teacher=mf E=2 K=3 users=2\nu 0\ne 1\n4 5 6\n"));
    }

    #[test]
    fn storage_count() {
        assert_eq!(tiny().storage_entries(0), 3 * 2 + 2);
    }

    #[test]
    fn malformed_files_are_rejected() {
        let text = tiny().to_text();
        assert!(TeacherTrajectory::parse(&text.replace("e 2", "e 3"), Path::new("t")).is_err());
        assert!(TeacherTrajectory::parse(&text.replace("HCTRAJ", "XX"), Path::new("t")).is_err());
        assert!(TeacherTrajectory::parse(&text.replace("4 5 6", "4 5 x"), Path::new("t")).is_err());
        let truncated: String = text.lines().take(6).map(|l| format!("{l}\n")).collect();
        assert!(TeacherTrajectory::parse(&truncated, Path::new("t")).is_err());
    }

    #[test]
    fn compatibility_reports_user_mismatch() {
        let err = check_compatible(&[tiny()], 3).unwrap_err();
        assert!(err.to_string().contains("covers 2 users"));
    }
}
