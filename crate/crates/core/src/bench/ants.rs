//! Ants wandering a grid looking for food, with a printer thread.
//!
//! Shared layout: one variable per cell (row major), then the count of food
//! left, then the count of live ants. An ant checks a square and moves onto
//! it in the same segment, so two ants never share a square. The printer
//! reads the whole grid in one segment, so every snapshot it prints is
//! consistent.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{draw, jitter, require, BenchError, Params, Workload};
use crate::error::AccessError;
use crate::program::{AccessSet, Ctx, Locals, Program, SegmentOutcome};
use crate::store::{Value, VarId};

pub const EMPTY: Value = 0;
pub const FOOD: Value = 1;
pub const ANT: Value = 2;
pub const DEAD: Value = 3;

#[derive(Copy, Clone)]
struct Grid {
    width: i64,
    height: i64,
}

impl Grid {
    fn cells(self) -> usize {
        (self.width * self.height) as usize
    }

    fn food_left(self) -> VarId {
        VarId(self.cells() as u32)
    }

    fn alive(self) -> VarId {
        VarId(self.cells() as u32 + 1)
    }

    /// In-bounds neighbours of `pos`, in a fixed order.
    fn neighbours(self, pos: i64) -> Vec<i64> {
        let (x, y) = (pos % self.width, pos / self.width);
        let mut out = Vec::with_capacity(8);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if (dx, dy) != (0, 0) && (0..self.width).contains(&nx) && (0..self.height).contains(&ny) {
                    out.push(ny * self.width + nx);
                }
            }
        }
        out
    }

    fn count(self, cells: &[Value]) -> (i64, i64) {
        let cells = &cells[..self.cells()];
        let of = |kind| cells.iter().filter(|&&c| c == kind).count() as i64;
        (of(ANT), of(FOOD))
    }
}

/// Locals: `[pos, health, pc, rng]`.
struct Ant {
    grid: Grid,
    food_health: i64,
    delay: i64,
}

const POS: usize = 0;
const HEALTH: usize = 1;
const PC: usize = 2;
const RNG: usize = 3;

impl Program for Ant {
    fn name(&self) -> &str {
        "ant"
    }

    fn step(&self, l: &mut Locals, ctx: &mut Ctx<'_>) -> Result<SegmentOutcome, AccessError> {
        let g = self.grid;
        if l[PC] == 1 {
            l[HEALTH] -= 1;
            if l[HEALTH] <= 0 {
                ctx.write(VarId(l[POS] as u32), DEAD)?;
                ctx.add(g.alive(), -1)?;
                ctx.emit(format!("ant {} starved", ctx.tid()))?;
                return Ok(SegmentOutcome::Done);
            }
            ctx.assert_no_more_shared()?;
            let rest = jitter(self.delay, &mut l[RNG], ctx);
            ctx.delay(rest);
            l[PC] = 0;
            ctx.label("yield;");
            return Ok(SegmentOutcome::Yield);
        }

        if ctx.read(g.food_left())? == 0 {
            return Ok(SegmentOutcome::Done);
        }
        let around = g.neighbours(l[POS]);
        let mut target = None;
        for &cell in &around {
            if ctx.read(VarId(cell as u32))? == FOOD {
                target = Some(cell);
                break;
            }
        }
        let target = match target {
            Some(cell) => cell,
            None => around[(draw(&mut l[RNG], ctx) % around.len() as u64) as usize],
        };
        let there = ctx.read(VarId(target as u32))?;
        if there == EMPTY || there == FOOD {
            if there == FOOD {
                l[HEALTH] += self.food_health;
                ctx.add(g.food_left(), -1)?;
            }
            ctx.write(VarId(target as u32), ANT)?;
            ctx.write(VarId(l[POS] as u32), EMPTY)?;
            l[POS] = target;
        }
        l[PC] = 1;
        ctx.label("yield;");
        Ok(SegmentOutcome::Yield)
    }

    fn access_set(&self, l: &Locals) -> Option<AccessSet> {
        let g = self.grid;
        let own = VarId(l[POS] as u32);
        let mut set: AccessSet = if l[PC] == 1 {
            [own, g.alive()].into_iter().collect()
        } else {
            g.neighbours(l[POS]).into_iter().map(|c| VarId(c as u32)).collect()
        };
        set.insert(own);
        set.insert(g.food_left());
        Some(set)
    }
}

/// Locals: `[snapshots, rng]`.
struct Printer {
    grid: Grid,
    delay: i64,
}

impl Program for Printer {
    fn name(&self) -> &str {
        "ant-printer"
    }

    fn step(&self, l: &mut Locals, ctx: &mut Ctx<'_>) -> Result<SegmentOutcome, AccessError> {
        let g = self.grid;
        let mut cells = Vec::with_capacity(g.cells());
        for i in 0..g.cells() {
            cells.push(ctx.read(VarId(i as u32))?);
        }
        let food = ctx.read(g.food_left())?;
        let alive = ctx.read(g.alive())?;
        let (ants, food_cells) = g.count(&cells);
        if ants != alive || food_cells != food {
            ctx.emit(format!(
                "VIOLATION snapshot {} shows {ants} ants and {food_cells} food, counters say {alive} and {food}",
                l[0]
            ))?;
        }
        let rows: Vec<String> = cells
            .chunks(g.width as usize)
            .map(|row| {
                row.iter()
                    .map(|&c| ['.', 'f', 'a', 'x'][c.clamp(0, 3) as usize])
                    .collect()
            })
            .collect();
        ctx.emit(format!("snapshot {} {}", l[0], rows.join("/")))?;
        l[0] += 1;
        if food == 0 || alive == 0 {
            return Ok(SegmentOutcome::Done);
        }
        ctx.assert_no_more_shared()?;
        let pause = jitter(self.delay, &mut l[1], ctx);
        ctx.delay(pause);
        ctx.label("yield;");
        Ok(SegmentOutcome::Yield)
    }

    fn access_set(&self, _: &Locals) -> Option<AccessSet> {
        Some((0..self.grid.cells() as u32 + 2).map(VarId).collect())
    }
}

pub(super) fn build(p: &Params) -> Result<Workload, BenchError> {
    let (width, height, ants, food) = (p["width"], p["height"], p["ants"], p["food"]);
    require("width", width, 2)?;
    require("height", height, 2)?;
    require("ants", ants, 1)?;
    require("food", food, 0)?;
    require("health", p["health"], 1)?;
    require("food_health", p["food_health"], 0)?;
    require("delay_us", p["delay_us"], 0)?;
    let grid = Grid { width, height };
    if ants + food > grid.cells() as i64 {
        return Err(BenchError::InvalidParam {
            key: "ants".into(),
            reason: format!("{ants} ants and {food} food do not fit on {width}x{height}"),
        });
    }

    let mut order: Vec<usize> = (0..grid.cells()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(p["layout_seed"] as u64));
    let mut initial = vec![EMPTY; grid.cells()];
    for &cell in &order[..ants as usize] {
        initial[cell] = ANT;
    }
    for &cell in &order[ants as usize..(ants + food) as usize] {
        initial[cell] = FOOD;
    }
    initial.push(food);
    initial.push(ants);

    let mut w = Workload::new("ants", p, initial);
    let ant: Arc<dyn Program> = Arc::new(Ant {
        grid,
        food_health: p["food_health"],
        delay: p["delay_us"],
    });
    for &cell in &order[..ants as usize] {
        w.thread(&ant, vec![cell as i64, p["health"], 0, 0]);
    }
    let printer: Arc<dyn Program> = Arc::new(Printer {
        grid,
        delay: p["delay_us"],
    });
    w.thread(&printer, vec![0, 0]);
    w.monitor(move |s| {
        let (ants, food_cells) = grid.count(s);
        let (food, alive) = (s[grid.food_left().index()], s[grid.alive().index()]);
        if ants != alive {
            return Some(format!("{ants} ants on the grid, {alive} alive"));
        }
        (food_cells != food).then(|| format!("{food_cells} food on the grid, counter says {food}"))
    });
    Ok(w)
}
