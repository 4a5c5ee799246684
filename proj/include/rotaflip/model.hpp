#pragma once

#include <cstdio>
#include <fstream>
#include <filesystem>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "rotaflip/layers.hpp"

namespace rotaflip {

/// Directed acyclic graph of layers. Node 0 is the input placeholder; nodes are
/// stored in topological order (every input index precedes its consumer) and
/// the last node is the output.
template <class S>
class Model {
 public:
  struct Node {
    std::string name;
    std::string block;
    std::unique_ptr<Layer<S>> layer;  // null for the input node
    std::vector<std::size_t> inputs;
  };

  /// `input` is the per-sample (1,C,H,W) shape.
  explicit Model(Shape input) : input_shape_(input) { nodes_.push_back({"input", "input", nullptr, {}}); }

  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  static constexpr std::size_t kInput = 0;

  std::size_t add(std::string name, std::string block, std::unique_ptr<Layer<S>> layer,
                  std::vector<std::size_t> inputs) {
    for (auto i : inputs)
      if (i >= nodes_.size()) throw Error("model: node " + name + " references a later node");
    for (const Node& n : nodes_)
      if (n.name == name) throw Error("model: duplicate node name " + name);
    nodes_.push_back({std::move(name), std::move(block), std::move(layer), std::move(inputs)});
    return nodes_.size() - 1;
  }

  const std::vector<Node>& nodes() const { return nodes_; }
  const Shape& input_shape() const { return input_shape_; }

  Tensor<S> forward(const Tensor<S>& x, Mode mode) {
    const Shape& s = x.shape();
    if (s.c != input_shape_.c || s.h != input_shape_.h || s.w != input_shape_.w)
      throw ShapeError("model expects inputs of shape (N," + std::to_string(input_shape_.c) + "," +
                       std::to_string(input_shape_.h) + "," + std::to_string(input_shape_.w) + "), got " + s.str());
    outputs_.assign(nodes_.size(), Tensor<S>{});
    outputs_[0] = x;
    std::vector<const Tensor<S>*> in;
    for (std::size_t i = 1; i < nodes_.size(); ++i) {
      in.clear();
      for (auto j : nodes_[i].inputs) in.push_back(&outputs_[j]);
      outputs_[i] = nodes_[i].layer->forward(typename Layer<S>::Inputs(in), mode);
    }
    return outputs_.back();
  }

  /// Output of node `i` from the last forward pass (released by backward()).
  const Tensor<S>& node_output(std::size_t i) const {
    if (i >= outputs_.size()) throw Error("model: no stored output for node " + std::to_string(i));
    return outputs_[i];
  }

  /// Index of the node called `name`.
  std::size_t find(const std::string& name) const {
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (nodes_[i].name == name) return i;
    throw Error("model: no node named " + name);
  }

  /// Backpropagates `grad_out` through the last train-mode forward pass;
  /// returns the gradient with respect to the model input.
  Tensor<S> backward(const Tensor<S>& grad_out) {
    if (outputs_.size() != nodes_.size()) throw Error("model: backward without forward");
    std::vector<Tensor<S>> grads(nodes_.size());
    grads.back() = grad_out;
    for (std::size_t i = nodes_.size() - 1; i >= 1; --i) {
      if (grads[i].empty()) continue;
      std::vector<Tensor<S>> gin = nodes_[i].layer->backward(grads[i]);
      grads[i] = Tensor<S>{};
      for (std::size_t k = 0; k < gin.size(); ++k) {
        Tensor<S>& dst = grads[nodes_[i].inputs[k]];
        if (dst.empty())
          dst = std::move(gin[k]);
        else
          dst.array() += gin[k].array();
      }
    }
    outputs_.clear();
    return grads[0];
  }

  std::vector<Parameter<S>*> parameters() {
    std::vector<Parameter<S>*> out;
    for (Node& n : nodes_)
      if (n.layer)
        for (Parameter<S>* p : n.layer->parameters()) out.push_back(p);
    return out;
  }

  /// Parameters with their owning node names, in node order.
  std::vector<std::pair<std::string, Parameter<S>*>> named_parameters() {
    std::vector<std::pair<std::string, Parameter<S>*>> out;
    for (Node& n : nodes_)
      if (n.layer)
        for (Parameter<S>* p : n.layer->parameters()) out.emplace_back(n.name + "." + p->name, p);
    return out;
  }

  std::size_t parameter_count(bool trainable_only = true) {
    std::size_t k = 0;
    for (Parameter<S>* p : parameters())
      if (p->trainable || !trainable_only) k += p->value.size();
    return k;
  }

  void zero_grad() {
    for (Parameter<S>* p : parameters()) p->grad.array().setZero();
  }

  /// Each node draws from a sub-stream labeled by its name, so adding or
  /// removing parameter-free nodes never changes other nodes' initial values.
  void initialize(std::uint64_t seed) {
    const RngStream root = RngStream(seed).child("init");
    for (Node& n : nodes_)
      if (n.layer) {
        RngStream s = root.child(n.name);
        n.layer->initialize(s);
      }
  }

  /// Assigns each stochastic layer its own stream labeled by node name.
  void seed_stochastic(std::uint64_t seed) {
    const RngStream root = RngStream(seed).child("stochastic");
    for (Node& n : nodes_)
      if (n.layer) n.layer->set_stream(root.child(n.name));
  }

  void freeze_masks(bool frozen) {
    for (Node& n : nodes_)
      if (n.layer) n.layer->freeze_masks(frozen);
  }

  void freeze_statistics(bool frozen) {
    for (Node& n : nodes_)
      if (n.layer) n.layer->freeze_statistics(frozen);
  }

  /// Combined branch signature of all layers after the last forward pass.
  std::uint64_t branch_signature() const {
    std::uint64_t h = 0;
    for (const Node& n : nodes_)
      if (n.layer) h = mix64(h ^ n.layer->branch_signature());
    return h;
  }

  std::size_t count(LayerKind kind) const {
    std::size_t k = 0;
    for (const Node& n : nodes_)
      if (n.layer && n.layer->kind() == kind) ++k;
    return k;
  }

  /// One line per node: "index name block kind inputs description".
  std::string listing() const {
    std::ostringstream os;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const Node& n = nodes_[i];
      os << i << ' ' << n.name << ' ' << n.block << ' ' << (n.layer ? kind_name(n.layer->kind()) : "input") << " [";
      for (std::size_t k = 0; k < n.inputs.size(); ++k) os << (k ? "," : "") << n.inputs[k];
      os << "] " << (n.layer ? n.layer->describe() : input_shape_.str()) << '\n';
    }
    return os.str();
  }

  /// Writes one tensor file per parameter plus manifest.txt with lines
  /// "node_index,node_name,layer_kind,parameter,file".
  void save(const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream manifest(dir / "manifest.txt");
    if (!manifest) throw IoError("cannot write " + (dir / "manifest.txt").string());
    manifest << "node_index,node_name,layer_kind,parameter,file\n";
    std::size_t k = 0;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const Node& n = nodes_[i];
      if (!n.layer) continue;
      for (Parameter<S>* p : n.layer->parameters()) {
        char idx[16];
        std::snprintf(idx, sizeof idx, "p%04zu", k++);
        const std::string file = std::string(idx) + "_" + n.name + "." + p->name + ".rtfl";
        std::string safe = file;
        for (char& ch : safe)
          if (ch == '/') ch = '-';
        save_tensor((dir / safe).string(), p->value);
        manifest << i << ',' << n.name << ',' << kind_name(n.layer->kind()) << ',' << p->name << ',' << safe << '\n';
      }
    }
    if (!manifest) throw IoError("write failed: " + (dir / "manifest.txt").string());
  }

  /// Restores parameters written by save(); the manifest must match this graph.
  void load(const std::filesystem::path& dir) {
    std::ifstream manifest(dir / "manifest.txt");
    if (!manifest) throw IoError("cannot open " + (dir / "manifest.txt").string());
    std::map<std::string, std::string> files;
    std::string line;
    std::getline(manifest, line);
    while (std::getline(manifest, line)) {
      if (line.empty()) continue;
      std::vector<std::string> f;
      std::stringstream ss(line);
      std::string item;
      while (std::getline(ss, item, ',')) f.push_back(item);
      if (f.size() != 5) throw ParseError("malformed checkpoint manifest line: " + line, 0);
      files[f[1] + "." + f[3]] = f[4];
    }
    for (auto& [name, p] : named_parameters()) {
      auto it = files.find(name);
      if (it == files.end()) throw ShapeError("checkpoint is missing parameter " + name);
      Tensor<S> t = load_tensor<S>((dir / it->second).string());
      if (t.shape() != p->value.shape())
        throw ShapeError("checkpoint parameter " + name + " has shape " + t.shape().str() + ", model expects " +
                         p->value.shape().str());
      p->value = std::move(t);
    }
  }

 private:
  Shape input_shape_;
  std::vector<Node> nodes_;
  std::vector<Tensor<S>> outputs_;
};

}  // namespace rotaflip
