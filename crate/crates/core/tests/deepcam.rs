use hhdemand::net::{
    constrain_logits, forward, generate_household, loss_and_grad, loss_and_param_grads, role_probabilities, teacher_forced_logits, train, Batch,
    HouseholdSample, ModelConfig, ParamStore, SamplingOptions, TrainSettings,
};
use hhdemand::schedule::{ActivityType, Gender, Household, Person, SlotGrid, SLOTS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny() -> ModelConfig {
    ModelConfig {
        embed_dim: 8,
        n_heads: 2,
        n_encoder_layers: 1,
        n_decoder_layers: 1,
        ffn_dim: 8,
        ..ModelConfig::default()
    }
}

fn household(id: u64, ages: &[u32]) -> Household {
    Household {
        household_id: id,
        members: ages
            .iter()
            .enumerate()
            .map(|(i, &age)| Person {
                person_id: id * 100 + i as u64,
                age,
                employed: age >= 18 && i % 2 == 0,
                student: age < 18,
                education: (i % 5) as u8,
                has_license: age >= 18,
                gender: if i % 2 == 0 { Gender::Male } else { Gender::Female },
            })
            .collect(),
        income: 4,
        vehicles: 1,
        home_taz: 1,
    }
}

fn blocky_row(rng: &mut impl Rng) -> [ActivityType; SLOTS] {
    let mut row = [ActivityType::HOME; SLOTS];
    let mut t = rng.gen_range(20..40);
    while t < 80 {
        let len = rng.gen_range(2..16);
        let code = ActivityType::from_code(rng.gen_range(0..15)).unwrap();
        for c in row.iter_mut().skip(t).take(len) {
            *c = code;
        }
        t += len + rng.gen_range(0..6);
    }
    row
}

fn sample(id: u64, ages: &[u32], rng: &mut impl Rng) -> HouseholdSample {
    let rows: Vec<_> = ages.iter().map(|_| blocky_row(rng)).collect();
    HouseholdSample {
        household: household(id, ages),
        grid: SlotGrid::from_rows(&rows).unwrap(),
    }
}

fn total_loss(params: &ParamStore, cfg: &ModelConfig, batch: &Batch, w: &[f64]) -> f64 {
    let f = forward(params, cfg, batch, None).unwrap();
    let z = constrain_logits(f.graph.value(f.logits), batch);
    loss_and_grad(&z, batch, w, cfg.lambda_aor).0.total
}

#[test]
fn analytic_gradients_match_central_differences() {
    let cfg = tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let s = [sample(1, &[45, 43, 12], &mut rng), sample(2, &[30, 29], &mut rng)];
    let batch = Batch::fit(&s.iter().collect::<Vec<_>>());
    let params = ParamStore::init(&cfg, 3);
    let w: Vec<f64> = (0..15).map(|i| 0.2 + 0.05 * i as f64).collect();
    let (_, grads) = loss_and_param_grads(&params, &cfg, &batch, &w, None).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (name, g) in &grads {
        for _ in 0..3 {
            let i = rng.gen_range(0..g.data.len());
            let mut plus = params.clone();
            plus.tensors.get_mut(name).unwrap().data[i] += h;
            let mut minus = params.clone();
            minus.tensors.get_mut(name).unwrap().data[i] -= h;
            let num = (total_loss(&plus, &cfg, &batch, &w) - total_loss(&minus, &cfg, &batch, &w)) / (2.0 * h);
            let a = g.data[i];
            let rel = (a - num).abs() / a.abs().max(num.abs()).max(1e-4);
            worst = worst.max(rel);
            assert!(rel < 1e-4, "{name}[{i}]: analytic {a} numeric {num}");
        }
    }
    assert!(worst < 1e-4);
}

#[test]
fn incremental_decoding_matches_full_forward() {
    let cfg = ModelConfig {
        diag_bias: 1.5,
        ..tiny()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params = ParamStore::init(&cfg, 9);
    let s = [sample(1, &[50, 48, 20, 15], &mut rng), sample(2, &[33, 8], &mut rng)];
    let batch = Batch::new(&s.iter().collect::<Vec<_>>(), 5);
    let f = forward(&params, &cfg, &batch, None).unwrap();
    let full = f.graph.value(f.logits);
    for (b, smp) in s.iter().enumerate() {
        let inc = teacher_forced_logits(&params, &cfg, &smp.household, &smp.grid).unwrap();
        for (t, step) in inc.iter().enumerate() {
            for p in 0..smp.household.size() {
                let a = full.row(batch.out_row(b, t, p));
                let c = step.row(p);
                for j in 0..16 {
                    assert!((a[j] - c[j]).abs() <= 1e-9, "b{b} t{t} p{p} j{j}: {} vs {}", a[j], c[j]);
                }
            }
        }
    }
}

#[test]
fn role_attention_ignores_padding() {
    let cfg = tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let s = [sample(1, &[40, 10], &mut rng)];
    let batch = Batch::new(&s.iter().collect::<Vec<_>>(), 4);
    let f = forward(&ParamStore::init(&cfg, 1), &cfg, &batch, None).unwrap();
    let probs = role_probabilities(&f);
    for i in 0..4 {
        let row = &probs[i * 4..(i + 1) * 4];
        assert_eq!(row[2], 0.0);
        assert_eq!(row[3], 0.0);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn generation_respects_structure_and_is_reproducible() {
    let cfg = tiny();
    let params = ParamStore::init(&cfg, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let s = sample(7, &[41, 40, 9], &mut rng);
    let opts = SamplingOptions { temperature: 1.0, seed: 3 };
    let a = generate_household(&params, &cfg, &s.household, &s.grid.rows[0], &opts).unwrap();
    let b = generate_household(&params, &cfg, &s.household, &s.grid.rows[0], &opts).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.rows[0], s.grid.rows[0]);
    a.validate().unwrap();
    assert!(a.rows[3..].iter().all(|r| r.iter().all(|c| c.is_pad())));
    let greedy = SamplingOptions { temperature: 0.0, seed: 99 };
    let g1 = generate_household(&params, &cfg, &s.household, &s.grid.rows[0], &greedy).unwrap();
    let g2 = generate_household(&params, &cfg, &s.household, &s.grid.rows[0], &SamplingOptions { seed: 1, ..greedy }).unwrap();
    assert_eq!(g1, g2);
}

#[test]
fn masked_head_is_rejected() {
    let cfg = tiny();
    let params = ParamStore::init(&cfg, 4);
    let h = household(1, &[40]);
    let mut head = [ActivityType::HOME; SLOTS];
    head[10] = ActivityType::PAD;
    let e = generate_household(&params, &cfg, &h, &head, &SamplingOptions::default()).unwrap_err();
    assert!(matches!(e, hhdemand::Error::MaskedPerson { slot: 10 }));
}

#[test]
fn training_reduces_loss() {
    let cfg = tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let samples: Vec<_> = (0..20).map(|i| sample(i, &[40, 38, 10][..2 + (i as usize % 2)], &mut rng)).collect();
    let settings = TrainSettings {
        epochs: 6,
        batch_size: 4,
        learning_rate: 5e-3,
        ..TrainSettings::default()
    };
    let out = train(&samples, &cfg, &settings, &[1.0; 15], None).unwrap();
    let first = out.history.first().unwrap().train.total;
    let last = out.history.last().unwrap().train.total;
    assert!(last < first, "{first} -> {last}");
    assert!(out.best_epoch >= 1);
    let again = train(&samples, &cfg, &settings, &[1.0; 15], None).unwrap();
    assert_eq!(again.params, out.params);
}
