use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What to do with the last `L mod k` qubits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RemainderPolicy {
    /// Leave them out of every group.
    #[default]
    Exclude,
    /// Collect them into one extra, smaller group.
    SmallerFinalGroup,
}

/// Disjoint groups of contiguous qubits, numbered from qubit 0.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    n_qubits: usize,
    k: usize,
    groups: Vec<Vec<usize>>,
}

impl Partition {
    pub fn contiguous(n_qubits: usize, k: usize, policy: RemainderPolicy) -> Result<Self> {
        if k == 0 || k > n_qubits {
            return Err(Error::InvalidGroup(format!("group size {k} for {n_qubits} qubits")));
        }
        let m = n_qubits / k;
        let mut groups: Vec<Vec<usize>> = (0..m).map(|j| (j * k..(j + 1) * k).collect()).collect();
        if policy == RemainderPolicy::SmallerFinalGroup && n_qubits % k != 0 {
            groups.push((m * k..n_qubits).collect());
        }
        Ok(Self { n_qubits, k, groups })
    }

    /// Arbitrary groups; each must be contiguous and ascending, and groups disjoint.
    pub fn from_groups(n_qubits: usize, groups: Vec<Vec<usize>>) -> Result<Self> {
        let mut used = vec![false; n_qubits];
        let mut k = 0;
        for g in &groups {
            if g.is_empty() {
                return Err(Error::InvalidGroup("empty group".into()));
            }
            for w in g.windows(2) {
                if w[1] != w[0] + 1 {
                    return Err(Error::InvalidGroup(format!("group {g:?} is not contiguous and ascending")));
                }
            }
            for &q in g {
                if q >= n_qubits || used[q] {
                    return Err(Error::InvalidGroup(format!("qubit {q} out of range or reused")));
                }
                used[q] = true;
            }
            k = k.max(g.len());
        }
        Ok(Self { n_qubits, k, groups })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    /// Nominal group size.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn group(&self, j: usize) -> &[usize] {
        &self.groups[j]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn remainder_policies() {
        let p = Partition::contiguous(15, 2, RemainderPolicy::Exclude).unwrap();
        assert_eq!(p.len(), 7);
        assert_eq!(p.group(6), &[12, 13]);
        let q = Partition::contiguous(15, 2, RemainderPolicy::SmallerFinalGroup).unwrap();
        assert_eq!(q.len(), 8);
        assert_eq!(q.group(7), &[14]);
    }

    #[test]
    fn rejects_overlap_and_gaps() {
        assert!(Partition::from_groups(4, vec![vec![0, 1], vec![1, 2]]).is_err());
        assert!(Partition::from_groups(4, vec![vec![0, 2]]).is_err());
        assert!(Partition::from_groups(4, vec![vec![2, 3], vec![0]]).is_ok());
    }
}
