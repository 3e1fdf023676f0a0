#pragma once

// Sample preparation (face resize, CHW packing) and batched prediction
// shared by training-time validation and the evaluation protocols.

#include <functional>
#include <vector>

#include "slyk/data.hpp"
#include "slyk/pmn.hpp"

namespace slyk::infer {

using geometry::GazeAngles;

/// Images and labels packed as (N, 3, H, W) float tensors.
struct Prepared {
  nn::Tensor<float> faces, lefts, rights;
  std::vector<GazeAngles> labels;
  std::vector<int> classes;

  std::size_t size() const noexcept { return labels.size(); }
};

/// Network inputs for one sample; the face may be any size.
struct ModelInput {
  cv::Mat face, left, right;
};

inline cv::Mat face_input(const cv::Mat& face, int face_size) {
  if (face.rows == face_size && face.cols == face_size) return face;
  return image::resize_to(face, face_size, face_size);
}

inline Prepared prepare(const std::vector<ModelInput>& inputs, int face_size) {
  SLYK_EXPECT(!inputs.empty(), "prepare: no samples");
  std::vector<cv::Mat> faces;
  std::vector<const cv::Mat*> f, l, r;
  faces.reserve(inputs.size());
  for (const auto& in : inputs) faces.push_back(face_input(in.face, face_size));
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    f.push_back(&faces[i]);
    l.push_back(&inputs[i].left);
    r.push_back(&inputs[i].right);
  }
  Prepared p;
  p.faces = image::to_batch<float>(f);
  p.lefts = image::to_batch<float>(l);
  p.rights = image::to_batch<float>(r);
  p.labels.resize(inputs.size());
  p.classes.assign(inputs.size(), -1);
  return p;
}

inline Prepared prepare(const std::vector<const data::Sample*>& samples, int face_size) {
  std::vector<ModelInput> in;
  in.reserve(samples.size());
  for (const auto* s : samples) in.push_back({s->face, s->left_patch, s->right_patch});
  auto p = prepare(in, face_size);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    p.labels[i] = samples[i]->label;
    p.classes[i] = samples[i]->class_id;
  }
  return p;
}

/// Rows `idx` of an (N, ...) tensor.
template <class T>
nn::Tensor<T> gather(const nn::Tensor<float>& src, const std::vector<std::size_t>& idx) {
  nn::Shape s = src.shape();
  const std::size_t row = src.size() / static_cast<std::size_t>(s[0]);
  s[0] = static_cast<int>(idx.size());
  nn::Tensor<T> out(s);
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy_n(src.data() + idx[i] * row, row, out.data() + i * row);
  return out;
}

template <class T>
struct BatchOutput {
  std::vector<GazeAngles> angles;
  nn::Tensor<T> head;  // (N, out): normalized pair or class logits
};

/// Eval-mode forward over `p` in chunks of `batch`.
template <class T>
BatchOutput<T> run(pmn::GazeModel<T>& model, const Prepared& p, int batch) {
  SLYK_EXPECT(batch >= 1, "predict: batch size must be positive");
  nn::NoGradGuard guard;
  const int out_dim = model.head().out_dim();
  BatchOutput<T> out;
  out.head = nn::Tensor<T>({static_cast<int>(p.size()), out_dim});
  out.angles.resize(p.size());
  const bool gaze = model.config().num_classes == 0;
  for (std::size_t begin = 0; begin < p.size(); begin += static_cast<std::size_t>(batch)) {
    const std::size_t end = std::min(p.size(), begin + static_cast<std::size_t>(batch));
    std::vector<std::size_t> idx(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    const auto o = model.forward(nn::constant(gather<T>(p.faces, idx)), nn::constant(gather<T>(p.lefts, idx)),
                                 nn::constant(gather<T>(p.rights, idx)), {false, nullptr});
    std::copy_n(o.head.value().data(), idx.size() * static_cast<std::size_t>(out_dim),
                out.head.data() + begin * static_cast<std::size_t>(out_dim));
    if (gaze)
      for (std::size_t i = 0; i < idx.size(); ++i)
        out.angles[begin + i] = {static_cast<double>(o.angles.value()[2 * i]),
                                 static_cast<double>(o.angles.value()[2 * i + 1])};
  }
  return out;
}

using Predictor = std::function<std::vector<GazeAngles>(const std::vector<ModelInput>&)>;

template <class T>
Predictor make_predictor(pmn::GazeModel<T>& model, int face_size, int batch) {
  return [&model, face_size, batch](const std::vector<ModelInput>& in) {
    return run(model, prepare(in, face_size), batch).angles;
  };
}

}  // namespace slyk::infer
