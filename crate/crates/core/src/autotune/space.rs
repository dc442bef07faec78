use super::Workload;
use crate::error::{Error, Result};
use crate::kernels::{TileConfig, MAX_VECTOR};

/// Largest split candidate.
pub const MAX_SPLIT: usize = 16;

/// Split candidates in the default space never exceed this.
const DEFAULT_SPLIT_CAP: usize = 8;

/// Cartesian product of per-axis split candidates, loop orders, unroll
/// choices and vector widths.
///
/// Points are numbered in canonical order: axis-0 split slowest, then axis-1
/// split, axis-2 split, order, unroll and vector width fastest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigSpace {
    splits: Vec<Vec<usize>>,
    orders: Vec<Vec<usize>>,
    unroll: Vec<bool>,
    vector: Vec<usize>,
}

fn dedup<T: Ord + Clone>(mut v: Vec<T>) -> Vec<T> {
    v.sort();
    v.dedup();
    v
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out.sort();
    out
}

/// Divisors of `extent` up to [`MAX_SPLIT`].
pub fn split_candidates(extent: usize) -> Vec<usize> {
    (1..=extent.min(MAX_SPLIT))
        .filter(|d| extent % d == 0)
        .collect()
}

/// Default space of a workload: divisors up to 16 of each tiled extent, all
/// six loop orders, unrolled plane loops, scalar column blocks.
pub fn enumerate_space(workload: &Workload) -> Result<ConfigSpace> {
    let extents = workload.tiled_extents();
    if let Some(axis) = extents.iter().position(|&e| e == 0) {
        return Err(Error::EmptySpace(format!(
            "tiled axis {axis} of {workload} has extent 0"
        )));
    }
    let space = ConfigSpace::new(
        extents.iter().map(|&e| split_candidates(e)).collect(),
        permutations(3),
        vec![true],
        vec![1],
    )?;
    log::debug!("{workload}: {} configurations", space.len());
    Ok(space)
}

impl ConfigSpace {
    /// Builds a space from explicit candidates; duplicates are dropped.
    pub fn new(
        splits: Vec<Vec<usize>>,
        orders: Vec<Vec<usize>>,
        unroll: Vec<bool>,
        vector: Vec<usize>,
    ) -> Result<Self> {
        if splits.len() != 3 {
            return Err(Error::EmptySpace(format!(
                "{} split axes, expected 3",
                splits.len()
            )));
        }
        let splits: Vec<Vec<usize>> = splits.into_iter().map(dedup).collect();
        let space = ConfigSpace {
            splits,
            orders: dedup(orders),
            unroll: dedup(unroll),
            vector: dedup(vector),
        };
        if let Some(axis) = space.splits.iter().position(Vec::is_empty) {
            return Err(Error::EmptySpace(format!(
                "no split candidates for axis {axis}"
            )));
        }
        if space.orders.is_empty() || space.unroll.is_empty() || space.vector.is_empty() {
            return Err(Error::EmptySpace(
                "no order, unroll or vector candidates".into(),
            ));
        }
        let probe = TileConfig::new(&[1, 1, 1], &[0, 1, 2]);
        for s in space.splits.iter().flatten() {
            if *s == 0 {
                return Err(Error::InvalidTileConfig("split candidate 0".into()));
            }
        }
        for o in &space.orders {
            TileConfig {
                order: o.clone(),
                ..probe.clone()
            }
            .validate(3)?;
        }
        for &v in &space.vector {
            if v == 0 || v > MAX_VECTOR {
                return Err(Error::InvalidTileConfig(format!(
                    "vector width {v} not in 1..={MAX_VECTOR}"
                )));
            }
        }
        Ok(space)
    }

    pub fn with_unroll(self, unroll: Vec<bool>) -> Result<Self> {
        ConfigSpace::new(self.splits, self.orders, unroll, self.vector)
    }

    pub fn with_vector(self, vector: Vec<usize>) -> Result<Self> {
        ConfigSpace::new(self.splits, self.orders, self.unroll, vector)
    }

    pub fn with_orders(self, orders: Vec<Vec<usize>>) -> Result<Self> {
        ConfigSpace::new(self.splits, orders, self.unroll, self.vector)
    }

    fn radices(&self) -> [usize; 6] {
        [
            self.splits[0].len(),
            self.splits[1].len(),
            self.splits[2].len(),
            self.orders.len(),
            self.unroll.len(),
            self.vector.len(),
        ]
    }

    pub fn len(&self) -> usize {
        self.radices().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn splits(&self) -> &[Vec<usize>] {
        &self.splits
    }

    pub fn orders(&self) -> &[Vec<usize>] {
        &self.orders
    }

    /// Configuration number `index` in canonical order.
    pub fn get(&self, index: usize) -> Option<TileConfig> {
        if index >= self.len() {
            return None;
        }
        let radices = self.radices();
        let mut digits = [0usize; 6];
        let mut rest = index;
        for i in (0..6).rev() {
            digits[i] = rest % radices[i];
            rest /= radices[i];
        }
        Some(TileConfig {
            splits: (0..3).map(|a| self.splits[a][digits[a]]).collect(),
            order: self.orders[digits[3]].clone(),
            unroll: self.unroll[digits[4]],
            parallel: true,
            vector: self.vector[digits[5]],
        })
    }

    /// Inverse of [`ConfigSpace::get`].
    pub fn index_of(&self, config: &TileConfig) -> Option<usize> {
        if config.splits.len() != 3 || !config.parallel {
            return None;
        }
        let digits = [
            self.splits[0].iter().position(|&s| s == config.splits[0])?,
            self.splits[1].iter().position(|&s| s == config.splits[1])?,
            self.splits[2].iter().position(|&s| s == config.splits[2])?,
            self.orders.iter().position(|o| *o == config.order)?,
            self.unroll.iter().position(|&u| u == config.unroll)?,
            self.vector.iter().position(|&v| v == config.vector)?,
        ];
        let radices = self.radices();
        Some(
            digits
                .iter()
                .zip(radices)
                .fold(0, |acc, (&d, r)| acc * r + d),
        )
    }

    pub fn iter(&self) -> impl Iterator<Item = TileConfig> + '_ {
        (0..self.len()).map(move |i| self.get(i).expect("index in range"))
    }

    /// The untuned starting point: the largest candidate up to 8 on each
    /// axis, the natural loop order if present, unrolled, narrowest vector.
    pub fn default_config(&self) -> TileConfig {
        let pick = |c: &Vec<usize>| {
            c.iter()
                .copied()
                .filter(|&s| s <= DEFAULT_SPLIT_CAP)
                .max()
                .unwrap_or(c[0])
        };
        let natural = vec![0, 1, 2];
        TileConfig {
            splits: self.splits.iter().map(pick).collect(),
            order: if self.orders.contains(&natural) {
                natural
            } else {
                self.orders[0].clone()
            },
            unroll: self.unroll.contains(&true),
            parallel: true,
            vector: self.vector[0],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::DotSpec;
    use crate::word::WordWidth;

    fn matmul(r: usize, c: usize, k: usize) -> Workload {
        Workload::Matmul {
            rows: r,
            cols: c,
            depth: k,
            spec: DotSpec::new(2, 2).unwrap(),
            width: WordWidth::W64,
        }
    }

    #[test]
    fn cube_64_has_750_points() {
        let s = enumerate_space(&matmul(64, 64, 64)).unwrap();
        assert_eq!(s.splits()[0], vec![1, 2, 4, 8, 16]);
        assert_eq!(s.orders().len(), 6);
        assert_eq!(s.len(), 750);
    }

    #[test]
    fn prime_extent() {
        assert_eq!(split_candidates(7), vec![1, 7]);
        assert_eq!(split_candidates(17), vec![1]);
        assert_eq!(split_candidates(48), vec![1, 2, 3, 4, 6, 8, 12, 16]);
    }

    #[test]
    fn constrained_space() {
        let s =
            ConfigSpace::new(vec![vec![1]; 3], vec![vec![0, 1, 2]], vec![true], vec![1]).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.get(0).unwrap(), s.default_config());
    }

    #[test]
    fn empty_rejected() {
        assert!(matches!(
            enumerate_space(&matmul(0, 4, 4)),
            Err(Error::EmptySpace(_))
        ));
        assert!(matches!(
            ConfigSpace::new(
                vec![vec![1], vec![], vec![1]],
                vec![vec![0, 1, 2]],
                vec![true],
                vec![1]
            ),
            Err(Error::EmptySpace(_))
        ));
    }

    #[test]
    fn index_round_trip_and_validity() {
        let s = enumerate_space(&matmul(12, 6, 40))
            .unwrap()
            .with_vector(vec![1, 4])
            .unwrap()
            .with_unroll(vec![false, true])
            .unwrap();
        let mut seen = std::collections::HashSet::new();
        for (i, c) in s.iter().enumerate() {
            c.validate(3).unwrap();
            assert_eq!(s.index_of(&c), Some(i));
            assert!(seen.insert(c));
        }
        assert_eq!(seen.len(), s.len());
        assert!(s.index_of(&s.default_config()).is_some());
    }

    #[test]
    fn default_prefers_eight() {
        let s = enumerate_space(&matmul(64, 6, 7)).unwrap();
        let d = s.default_config();
        assert_eq!(d.splits, vec![8, 6, 7]);
        assert_eq!(d.order, vec![0, 1, 2]);
    }
}
