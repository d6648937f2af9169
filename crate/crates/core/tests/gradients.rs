use tblind_core::model::{
    backward, backward_from_logits, forward_with_trace, GradientScope, Gradients, ImageInput, LayerTensor,
    ModelConfig, ModelInput, Parameters, TensorId, TokenId,
};

fn tiny() -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        d_model: 8,
        n_heads: 2,
        d_ff: 12,
        vocab_size: 11,
        n_image_tokens: 2,
        max_text_tokens: 4,
        image_feature_dim: 5,
        seed: 17,
    }
}

fn loss(params: &Parameters, input: &ModelInput<'_>, target: TokenId) -> f64 {
    let (p, _) = forward_with_trace(params, input).unwrap();
    -p[target.index()].ln()
}

/// Worst relative error between analytic and central-difference gradients.
/// Entries whose gradient is below `1e-5` in magnitude are compared absolutely.
fn worst_error(params: &Parameters, input: &ModelInput<'_>, target: TokenId, grads: &Gradients) -> (f64, String) {
    let h = 1e-4;
    let mut worst = (0.0, String::new());
    for id in Parameters::tensor_ids(&params.config) {
        let len = params.tensor(id).unwrap().len();
        for i in 0..len {
            let mut plus = params.clone();
            plus.tensor_mut(id).unwrap()[i] += h;
            let mut minus = params.clone();
            minus.tensor_mut(id).unwrap()[i] -= h;
            let fd = (loss(&plus, input, target) - loss(&minus, input, target)) / (2.0 * h);
            let an = grads.tensor(id).unwrap()[i];
            let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-5);
            if err > worst.0 {
                worst = (err, format!("{id}[{i}] analytic={an:e} fd={fd:e}"));
            }
        }
    }
    worst
}

#[test]
fn backward_matches_finite_differences_with_image_features() {
    let params = Parameters::init(&tiny()).unwrap();
    let feats = [0.3f32, -1.0, 0.5, 0.0, 1.2];
    let text = [TokenId(3), TokenId(7), TokenId(1)];
    let input = ModelInput::new(ImageInput::Features(&feats), &text);
    let target = TokenId(4);
    let (_, trace) = forward_with_trace(&params, &input).unwrap();
    let grads = backward(&params, &trace, target).unwrap();
    let (err, at) = worst_error(&params, &input, target, &grads);
    assert!(err < 1e-3, "max relative error {err} at {at}");
}

#[test]
fn backward_matches_finite_differences_without_image() {
    let params = Parameters::init(&tiny()).unwrap();
    let text = [TokenId(2), TokenId(2), TokenId(9), TokenId(5)];
    let input = ModelInput::new(ImageInput::Absent, &text);
    let target = TokenId(0);
    let (_, trace) = forward_with_trace(&params, &input).unwrap();
    let grads = backward(&params, &trace, target).unwrap();
    let (err, at) = worst_error(&params, &input, target, &grads);
    assert!(err < 1e-3, "max relative error {err} at {at}");
    // Image projection is untouched by a text-only input.
    assert!(grads.image_projection.data.iter().all(|&g| g == 0.0));
    assert!(grads.null_image.data.iter().any(|&g| g != 0.0));
}

#[test]
fn scoped_gradients_equal_the_full_gradient_on_selected_tensors() {
    let params = Parameters::init(&tiny()).unwrap();
    let feats = [1.0f32, 0.0, -0.5, 0.25, 0.0];
    let text = [TokenId(6), TokenId(8)];
    let input = ModelInput::new(ImageInput::Features(&feats), &text);
    let (_, trace) = forward_with_trace(&params, &input).unwrap();
    let full = backward(&params, &trace, TokenId(2)).unwrap();

    let selected = [
        TensorId::Layer(1, LayerTensor::MlpIn),
        TensorId::Layer(1, LayerTensor::MlpOutBias),
        TensorId::Layer(1, LayerTensor::Query),
    ];
    let mut dl = trace.answer_distribution().to_vec();
    dl[2] -= 1.0;
    let mut scoped = Gradients::zeros(&params.config);
    backward_from_logits(&params, &trace, &dl, 1.0, &GradientScope::only(selected), &mut scoped).unwrap();
    for id in Parameters::tensor_ids(&params.config) {
        let s = scoped.tensor(id).unwrap();
        if selected.contains(&id) {
            assert_eq!(s, full.tensor(id).unwrap(), "{id}");
        } else {
            assert!(s.iter().all(|&g| g == 0.0), "{id} should be untouched");
        }
    }
}

#[test]
fn saturated_target_gives_zero_gradient() {
    let mut params = Parameters::init(&tiny()).unwrap();
    for layer in &mut params.layers {
        layer.attn_output.data.iter_mut().for_each(|x| *x = 0.0);
        layer.mlp_out.data.iter_mut().for_each(|x| *x = 0.0);
    }
    let text = [TokenId(1)];
    let input = ModelInput::new(ImageInput::Absent, &text);
    let (_, trace) = forward_with_trace(&params, &input).unwrap();
    let last = trace.output_position();
    let h = trace.h_new(1, last).to_vec();
    let norm = h.iter().map(|x| x * x).sum::<f64>().sqrt();
    let target = TokenId(6);
    for v in 0..params.config.vocab_size {
        let row = params.unembedding.row_mut(v);
        for (r, x) in row.iter_mut().zip(&h) {
            *r = if v == target.index() { 1e3 * x / norm } else { 0.0 };
        }
    }
    let (p, trace) = forward_with_trace(&params, &input).unwrap();
    assert_eq!(p[target.index()], 1.0);
    let g = backward(&params, &trace, target).unwrap();
    for id in Parameters::tensor_ids(&params.config) {
        assert!(g.tensor(id).unwrap().iter().all(|&x| x == 0.0), "{id}");
    }
}
