#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "lupi/checkpoint.hpp"
#include "lupi/config.hpp"
#include "lupi/data.hpp"
#include "lupi/eval.hpp"
#include "lupi/trainer.hpp"

namespace py = pybind11;
using namespace lupi;

namespace {

Image image_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
  if (arr.ndim() == 2) {
    Image img = Image::create(static_cast<std::size_t>(arr.shape(0)),
                              static_cast<std::size_t>(arr.shape(1)), 1);
    std::copy_n(arr.data(), img.pixels.size(), img.pixels.begin());
    return img;
  }
  if (arr.ndim() == 3 && arr.shape(2) == 3) {
    Image img = Image::create(static_cast<std::size_t>(arr.shape(0)),
                              static_cast<std::size_t>(arr.shape(1)), 3);
    std::copy_n(arr.data(), img.pixels.size(), img.pixels.begin());
    return img;
  }
  throw Error("expected an (h, w) or (h, w, 3) array");
}

py::array_t<double> image_to_array(const Image& img) {
  if (img.channels == 1) {
    py::array_t<double> out({img.height, img.width});
    std::copy_n(img.pixels.data(), img.pixels.size(), out.mutable_data());
    return out;
  }
  py::array_t<double> out({img.height, img.width, img.channels});
  std::copy_n(img.pixels.data(), img.pixels.size(), out.mutable_data());
  return out;
}

std::vector<std::vector<double>> rows_from_array(
    const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
  if (arr.ndim() != 2) throw Error("expected an (n, d) array");
  std::vector<std::vector<double>> rows(static_cast<std::size_t>(arr.shape(0)));
  const std::size_t d = static_cast<std::size_t>(arr.shape(1));
  for (std::size_t i = 0; i < rows.size(); ++i)
    rows[i].assign(arr.data() + i * d, arr.data() + (i + 1) * d);
  return rows;
}

std::vector<EmbeddingRecord> records_from_arrays(
    const py::array_t<double, py::array::c_style | py::array::forcecast>& feats,
    const std::vector<int>& ids, const std::vector<int>& cams, const std::string& modality) {
  auto rows = rows_from_array(feats);
  if (rows.size() != ids.size() || rows.size() != cams.size())
    throw Error("features, identities and cameras must have equal length");
  std::vector<EmbeddingRecord> recs(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    recs[i] = EmbeddingRecord{std::move(rows[i]), ids[i], cams[i], parse_modality(modality)};
  return recs;
}

EvalProtocol protocol_from_kwargs(const std::string& query_mod, const std::string& gallery_mod,
                                  const std::string& shot, bool exclude_same_camera,
                                  std::size_t trials, std::uint64_t seed) {
  EvalProtocol p;
  p.query_modality = parse_modality(query_mod);
  p.gallery_modality = parse_modality(gallery_mod);
  if (shot == "single") p.shot_mode = ShotMode::kSingle;
  else if (shot == "multi") p.shot_mode = ShotMode::kMulti;
  else throw Error("shot must be 'single' or 'multi'");
  p.exclude_same_camera = exclude_same_camera;
  p.num_trials = trials;
  p.rng_seed = seed;
  return p;
}

}  // namespace

PYBIND11_MODULE(_lupi, m) {
  m.doc() = "LUPI visible-infrared re-identification core";

  py::register_exception<Error>(m, "LupiError");

  m.def(
      "mix_channels",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& img,
         double alpha, double beta, double gamma) {
        return image_to_array(mix_channels(image_from_array(img), {alpha, beta, gamma}));
      },
      py::arg("image"), py::arg("alpha"), py::arg("beta"), py::arg("gamma"));

  m.def(
      "random_channel_mix",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& img,
         std::uint64_t seed) {
        Rng rng(seed);
        auto [mixed, w] = random_channel_mix(image_from_array(img), rng);
        return py::make_tuple(image_to_array(mixed), py::make_tuple(w.alpha, w.beta, w.gamma));
      },
      py::arg("image"), py::arg("seed"));

  m.def(
      "to_grayscale",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& img) {
        return image_to_array(to_grayscale(image_from_array(img)));
      },
      py::arg("image"));

  m.def(
      "augment",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& img,
         std::size_t target_h, std::size_t target_w, double pad_fraction,
         const std::string& pad_mode, double flip_prob, std::uint64_t seed) {
        AugmentPolicy policy;
        policy.target_h = target_h;
        policy.target_w = target_w;
        policy.pad_fraction = pad_fraction;
        if (pad_mode == "zero") policy.pad_mode = AugmentPolicy::PadMode::kZero;
        else if (pad_mode == "mean") policy.pad_mode = AugmentPolicy::PadMode::kMean;
        else throw Error("pad_mode must be 'zero' or 'mean'");
        policy.flip_prob = flip_prob;
        Rng rng(seed);
        return image_to_array(augment(image_from_array(img), policy, rng));
      },
      py::arg("image"), py::arg("target_h"), py::arg("target_w"),
      py::arg("pad_fraction") = 0.1, py::arg("pad_mode") = "zero",
      py::arg("flip_prob") = 0.0, py::arg("seed") = 0);

  m.def(
      "mmd",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& x,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& y,
         const std::vector<double>& bandwidths) {
        return mmd(rows_from_array(x), rows_from_array(y), bandwidths);
      },
      py::arg("x"), py::arg("y"), py::arg("bandwidths") = std::vector<double>{1.0});

  m.def(
      "evaluate",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& qf,
         const std::vector<int>& qid, const std::vector<int>& qcam,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& gf,
         const std::vector<int>& gid, const std::vector<int>& gcam,
         const std::string& query_mod, const std::string& gallery_mod,
         const std::string& shot, bool exclude_same_camera, std::size_t trials,
         std::uint64_t seed) {
        EvalReport rep = evaluate(
            records_from_arrays(qf, qid, qcam, query_mod),
            records_from_arrays(gf, gid, gcam, gallery_mod),
            protocol_from_kwargs(query_mod, gallery_mod, shot, exclude_same_camera, trials,
                                 seed));
        py::dict out;
        out["cmc"] = rep.cmc;
        out["map"] = rep.map;
        out["per_trial_rank1"] = rep.per_trial_rank1;
        out["per_trial_map"] = rep.per_trial_map;
        out["num_queries"] = rep.num_queries;
        out["gallery_size"] = rep.gallery_size;
        return out;
      },
      py::arg("query_features"), py::arg("query_ids"), py::arg("query_cameras"),
      py::arg("gallery_features"), py::arg("gallery_ids"), py::arg("gallery_cameras"),
      py::arg("query_mod") = "I", py::arg("gallery_mod") = "V", py::arg("shot") = "single",
      py::arg("exclude_same_camera") = false, py::arg("trials") = 10, py::arg("seed") = 0);

  m.def(
      "generate_synthetic",
      [](const std::string& out_dir, const py::dict& overrides) {
        RunConfig cfg;
        std::ostringstream text;
        for (const auto& item : overrides)
          text << py::cast<std::string>(item.first) << " = "
               << py::cast<std::string>(py::str(item.second)) << "\n";
        RunConfig parsed = parse_run_config(text.str());
        SynthDataset ds = generate_synthetic(parsed.synth);
        export_directory(ds.train, out_dir + "/train");
        export_directory(ds.test, out_dir + "/test");
        return py::make_tuple(ds.train.size(), ds.test.size());
      },
      py::arg("out_dir"), py::arg("overrides") = py::dict());

  m.def(
      "train_and_eval",
      [](const py::dict& overrides) {
        std::ostringstream text;
        for (const auto& item : overrides)
          text << py::cast<std::string>(item.first) << " = "
               << py::cast<std::string>(py::str(item.second)) << "\n";
        RunConfig cfg = parse_run_config(text.str());
        SynthDataset ds = generate_synthetic(cfg.synth);
        TrainResult result = train(ds.train, cfg.train);
        EvalReport rep = evaluate_with_model(result.params, ds.test, cfg.protocol);
        py::dict out;
        out["rank1"] = rep.rank_k(1);
        out["map"] = rep.map;
        out["final_loss"] = result.log.iterations.empty()
                                ? 0.0
                                : result.log.iterations.back().loss.total;
        out["iterations"] = result.log.iterations.size();
        return out;
      },
      py::arg("overrides") = py::dict());

  m.def("triplet_loss",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& anchors,
           const std::vector<int>& albl,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& positives,
           const std::vector<int>& plbl,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& negatives,
           const std::vector<int>& nlbl, double margin) {
          auto tensor_of = [](const auto& a) {
            std::vector<double> v(a.data(), a.data() + a.size());
            return Tensor::from_data({static_cast<std::size_t>(a.shape(0)),
                                      static_cast<std::size_t>(a.shape(1))},
                                     std::move(v));
          };
          TripletResult r = triplet_term(tensor_of(anchors), albl, tensor_of(positives), plbl,
                                         tensor_of(negatives), nlbl, margin);
          return py::make_tuple(r.value.item(), r.skipped_anchors);
        },
        py::arg("anchors"), py::arg("anchor_labels"), py::arg("positives"),
        py::arg("positive_labels"), py::arg("negatives"), py::arg("negative_labels"),
        py::arg("margin") = 0.3);
}
