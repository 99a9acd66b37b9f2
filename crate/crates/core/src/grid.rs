//! Rectangular 4-connected grids.

use alloc::vec::Vec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Cell {
    pub row: u8,
    pub col: u8,
}

impl Cell {
    pub const fn new(row: u8, col: u8) -> Self {
        Cell { row, col }
    }

    pub fn manhattan(self, other: Cell) -> u32 {
        (self.row as i32 - other.row as i32).unsigned_abs() + (self.col as i32 - other.col as i32).unsigned_abs()
    }

    pub fn is_adjacent(self, other: Cell) -> bool {
        self.manhattan(other) == 1
    }

    /// Chebyshev distance.
    pub fn king_distance(self, other: Cell) -> u32 {
        let dr = (self.row as i32 - other.row as i32).unsigned_abs();
        let dc = (self.col as i32 - other.col as i32).unsigned_abs();
        dr.max(dc)
    }
}

/// Movement component shared by every agent type, in the fixed order used
/// for tie-breaking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Move {
    Up,
    Down,
    Left,
    Right,
    Stay,
}

impl Move {
    pub const ALL: [Move; 5] = [Move::Up, Move::Down, Move::Left, Move::Right, Move::Stay];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Move> {
        Move::ALL.get(i).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Grid {
    pub width: u8,
    pub height: u8,
}

impl Grid {
    pub const fn new(width: u8, height: u8) -> Self {
        Grid { width, height }
    }

    pub const fn square(side: u8) -> Self {
        Grid { width: side, height: side }
    }

    pub fn n_cells(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn contains(&self, c: Cell) -> bool {
        c.row < self.height && c.col < self.width
    }

    #[inline]
    pub fn index(&self, c: Cell) -> usize {
        c.row as usize * self.width as usize + c.col as usize
    }

    #[inline]
    pub fn cell(&self, index: usize) -> Cell {
        Cell::new((index / self.width as usize) as u8, (index % self.width as usize) as u8)
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.n_cells()).map(|i| self.cell(i))
    }

    /// Target of a move, or `None` when it would leave the grid.
    #[inline]
    pub fn offset(&self, c: Cell, m: Move) -> Option<Cell> {
        let t = match m {
            Move::Up => Cell::new(c.row.checked_sub(1)?, c.col),
            Move::Down => Cell::new(c.row + 1, c.col),
            Move::Left => Cell::new(c.row, c.col.checked_sub(1)?),
            Move::Right => Cell::new(c.row, c.col + 1),
            Move::Stay => c,
        };
        self.contains(t).then_some(t)
    }

    /// In-grid 4-neighbours.
    pub fn neighbors(&self, c: Cell) -> impl Iterator<Item = Cell> + '_ {
        [Move::Up, Move::Down, Move::Left, Move::Right]
            .into_iter()
            .filter_map(move |m| self.offset(c, m))
    }
}

/// Simultaneous moves with cancel-on-conflict.
///
/// A mover stays put when its target is outside the grid, blocked, the
/// current cell of another mover, or the target of another mover.
pub fn resolve_moves(grid: &Grid, positions: &[Cell], moves: &[Move], blocked: impl Fn(Cell) -> bool) -> Vec<Cell> {
    let targets: Vec<Option<Cell>> = positions
        .iter()
        .zip(moves)
        .map(|(&p, &m)| match m {
            Move::Stay => None,
            _ => grid.offset(p, m).filter(|&t| !blocked(t)),
        })
        .collect();
    positions
        .iter()
        .enumerate()
        .map(|(i, &p)| match targets[i] {
            Some(t)
                if !positions.iter().enumerate().any(|(j, &q)| j != i && q == t)
                    && !targets.iter().enumerate().any(|(j, &o)| j != i && o == Some(t)) =>
            {
                t
            }
            _ => p,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn walls_clamp() {
        let g = Grid::square(5);
        assert_eq!(g.offset(Cell::new(0, 2), Move::Up), None);
        assert_eq!(g.offset(Cell::new(4, 4), Move::Right), None);
        assert_eq!(g.offset(Cell::new(2, 2), Move::Left), Some(Cell::new(2, 1)));
        let out = resolve_moves(&g, &[Cell::new(0, 2), Cell::new(3, 3)], &[Move::Up, Move::Down], |_| false);
        assert_eq!(out, vec![Cell::new(0, 2), Cell::new(4, 3)]);
    }

    #[test]
    fn conflicts_cancel_both() {
        let g = Grid::square(5);
        let pos = [Cell::new(2, 1), Cell::new(2, 3)];
        let out = resolve_moves(&g, &pos, &[Move::Right, Move::Left], |_| false);
        assert_eq!(out, pos.to_vec());
        // Swaps and following into a vacated cell are cancelled too.
        let pos = [Cell::new(2, 1), Cell::new(2, 2)];
        assert_eq!(resolve_moves(&g, &pos, &[Move::Right, Move::Left], |_| false), pos.to_vec());
        assert_eq!(resolve_moves(&g, &pos, &[Move::Right, Move::Right], |_| false), vec![Cell::new(2, 1), Cell::new(2, 3)]);
        // Blocked cells.
        assert_eq!(resolve_moves(&g, &pos, &[Move::Up, Move::Down], |c| c == Cell::new(1, 1)), vec![Cell::new(2, 1), Cell::new(3, 2)]);
    }

    #[test]
    fn index_round_trip() {
        let g = Grid::new(7, 4);
        for i in 0..g.n_cells() {
            assert_eq!(g.index(g.cell(i)), i);
        }
    }
}
