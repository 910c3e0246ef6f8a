use std::time::Instant;
use srnn::autodiff::{Mode, Tape, Matrix};
use srnn::model::*;
use srnn::synth::*;
use srnn::train::*;
use rand::SeedableRng;

fn main() {
    let g = ring_chord_graph(6, "s");
    let hp = Hyperparams::default();
    let params = init_params(&hp, 0).unwrap();
    let cfg = SynthConfig::new(g.clone(), 2, 1);
    let ds = generate(&cfg).unwrap();
    let scaled = Matrix::from_vec(ds.values.rows(), ds.values.cols(),
        ds.values.data().iter().map(|x| x / 100.0).collect()).unwrap();
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(0);
    let reps = 200;

    // forward only
    let t = Instant::now();
    for r in 0..reps {
        let mut tape = Tape::new();
        let tp = params.register(&mut tape);
        let _ = forward_window(&mut tape, &g, &tp, &hp, &scaled, 1 + (r % 50), 10, Mode::Eval, &mut rng).unwrap();
    }
    println!("forward only: {:.3} ms/window", t.elapsed().as_secs_f64() * 1e3 / reps as f64);

    // forward + loss + backward
    let t = Instant::now();
    for r in 0..reps {
        let mut tape = Tape::new();
        let tp = params.register(&mut tape);
        let win = forward_window(&mut tape, &g, &tp, &hp, &scaled, 1 + (r % 50), 10, Mode::Train, &mut rng).unwrap();
        let targets = window_targets(&scaled, 1 + (r % 50), 10);
        let loss = window_loss(&mut tape, &win.predictions(), &targets).unwrap();
        tape.backward(loss).unwrap();
    }
    println!("fwd+bwd:     {:.3} ms/window", t.elapsed().as_secs_f64() * 1e3 / reps as f64);

    // registration alone
    let t = Instant::now();
    for _ in 0..reps {
        let mut tape = Tape::new();
        let _tp = params.register(&mut tape);
    }
    println!("register:    {:.3} ms", t.elapsed().as_secs_f64() * 1e3 / reps as f64);

    // full training step
    let mut adam = AdamState::new(&params);
    let mut p2 = params.clone();
    let t = Instant::now();
    for r in 0..reps {
        let mut tape = Tape::new();
        let tp = p2.register(&mut tape);
        let win = forward_window(&mut tape, &g, &tp, &hp, &scaled, 1 + (r % 50), 10, Mode::Train, &mut rng).unwrap();
        let targets = window_targets(&scaled, 1 + (r % 50), 10);
        let loss = window_loss(&mut tape, &win.predictions(), &targets).unwrap();
        tape.backward(loss).unwrap();
        let grads: Vec<Matrix> = tp.ids().iter().map(|&id| tape.adjoint(id).clone()).collect();
        adam_step(&mut p2, &grads, &mut adam, 1e-4).unwrap();
    }
    println!("full step:   {:.3} ms/window", t.elapsed().as_secs_f64() * 1e3 / reps as f64);
}
