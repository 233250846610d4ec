//! Deterministic binary reduction over an ordered sequence of leaves.
//!
//! Leaves are pushed in index order; two partial results are combined as soon
//! as they cover sibling subtrees of equal size. The resulting tree depends
//! only on the number of leaves, so any amount of upstream parallelism gives
//! the same combine order.

/// How per-chunk results are combined in a streaming pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CombineOrder {
    /// Balanced binary tree over chunk indices; bitwise reproducible.
    #[default]
    Balanced,
    /// Combine in arrival order from worker threads. Lower latency, not reproducible.
    FirstCome,
}

pub struct CarryTree<T, F> {
    stack: Vec<(u32, T)>,
    combine: F,
    leaves: u64,
    combines: u64,
}

impl<T, E, F> CarryTree<T, F>
where
    F: FnMut(T, T) -> Result<T, E>,
{
    pub fn new(combine: F) -> Self {
        Self {
            stack: Vec::new(),
            combine,
            leaves: 0,
            combines: 0,
        }
    }

    pub fn push(&mut self, leaf: T) -> Result<(), E> {
        self.leaves += 1;
        let mut node = (0u32, leaf);
        while let Some(&(level, _)) = self.stack.last() {
            if level != node.0 {
                break;
            }
            let (_, left) = self.stack.pop().unwrap();
            node = (level + 1, (self.combine)(left, node.1)?);
            self.combines += 1;
        }
        self.stack.push(node);
        Ok(())
    }

    pub fn leaves(&self) -> u64 {
        self.leaves
    }

    /// Depth of the finished tree (0 for a single leaf).
    pub fn depth(&self) -> u32 {
        if self.leaves <= 1 {
            0
        } else {
            64 - (self.leaves - 1).leading_zeros()
        }
    }

    /// Folds the remaining partial trees right to left. Returns the result and
    /// the total number of combine calls made.
    pub fn finish(mut self) -> Result<Option<(T, u64)>, E> {
        let Some((_, mut acc)) = self.stack.pop() else {
            return Ok(None);
        };
        while let Some((_, left)) = self.stack.pop() {
            acc = (self.combine)(left, acc)?;
            self.combines += 1;
        }
        Ok(Some((acc, self.combines)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn render(n: usize) -> String {
        let mut tree = CarryTree::new(|a: String, b: String| Ok::<_, ()>(format!("({a}{b})")));
        for i in 0..n {
            tree.push(i.to_string()).unwrap();
        }
        tree.finish().unwrap().map(|(s, _)| s).unwrap_or_default()
    }

    #[test]
    fn balanced_for_powers_of_two() {
        assert_eq!(render(4), "((01)(23))");
        assert_eq!(render(8), "(((01)(23))((45)(67)))");
    }

    #[test]
    fn ragged_tail_folds_right() {
        assert_eq!(render(5), "(((01)(23))4)");
        assert_eq!(render(7), "(((01)(23))((45)6))");
        assert_eq!(render(1), "0");
        assert_eq!(render(0), "");
    }

    #[test]
    fn combine_count_is_leaves_minus_one() {
        let mut tree = CarryTree::new(|a: u64, b: u64| Ok::<_, ()>(a + b));
        for i in 0..13 {
            tree.push(i).unwrap();
        }
        assert_eq!(tree.depth(), 4);
        assert_eq!(tree.finish().unwrap(), Some((78, 12)));
    }
}
