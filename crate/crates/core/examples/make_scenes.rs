//! Regenerates the bundled scene files: `cargo run --example make_scenes -- <dir>`.

use std::path::PathBuf;

use diffsim2d::io::write_scene;
use diffsim2d::presets;
use diffsim2d::scene::{Block, Scene};
use diffsim2d::Result;

fn with_blocks(mut s: Scene, blocks: &[Block], tied: &[Block], iterations: usize) -> Scene {
    s.optimization.blocks = blocks.to_vec();
    s.optimization.tied = tied.to_vec();
    s.optimization.max_iterations = iterations;
    s
}

fn main() -> Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "scenes".into()));
    std::fs::create_dir_all(&dir)?;

    for order in [1, 2] {
        let s = with_blocks(presets::master(8, order, 10)?, &[Block::V0, Block::Gamma], &[], 30);
        write_scene(dir.join(format!("master_bdf{order}.json")), &s)?;
    }
    write_scene(dir.join("drop.json"), &with_blocks(presets::drop(2)?, &[Block::V0], &[], 20))?;

    let reference = presets::material_recovery(2000.0, 1000.0)?;
    let mut s = presets::material_recovery(1000.0, 500.0)?;
    presets::match_trajectory(&mut s, &reference, None)?;
    let s = with_blocks(s, &[Block::Lambda, Block::Mu], &[Block::Lambda, Block::Mu], 100);
    write_scene(dir.join("material_recovery.json"), &s)?;

    let reference = presets::sliding_puck(0.2)?;
    let mut s = presets::sliding_puck(0.5)?;
    presets::match_trajectory(&mut s, &reference, Some(1))?;
    write_scene(dir.join("sliding_puck.json"), &with_blocks(s, &[Block::Gamma], &[], 50))?;

    let reference = presets::thrown_piece([1.0, 2.0])?;
    let mut s = presets::thrown_piece([0.0, 0.0])?;
    presets::match_trajectory(&mut s, &reference, None)?;
    write_scene(dir.join("thrown_piece.json"), &with_blocks(s, &[Block::V0], &[], 50))?;

    // without remeshing, interior elements degenerate after about ten iterations
    let mut s = with_blocks(presets::cantilever(2)?, &[Block::Shape], &[], 8);
    s.optimization.fixed_tags = vec![1, 2];
    write_scene(dir.join("cantilever.json"), &s)?;
    Ok(())
}
