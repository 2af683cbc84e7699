#pragma once

#include <deque>
#include <functional>
#include <unordered_map>
#include <vector>

#include "drex/params.hpp"
#include "drex/rng.hpp"
#include "drex/tensor.hpp"

namespace drex {

// Reverse-mode tape over fp64 tensors. Forward values are computed
// eagerly; backward() sweeps the recorded nodes once and accumulates
// into Parameter::grad for every leaf bound via param(). Constants do
// not receive gradients. A tape is built per evaluation and discarded
// (or clear()ed) afterwards.
class Tape {
 public:
  struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
  };

  Var constant(Tensor v);
  // Leaf tied to a parameter; repeated calls for the same parameter
  // return the same node.
  Var param(Parameter& p);

  const Tensor& value(Var v) const;
  double scalar(Var v) const;

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double c);
  Var add_n(const std::vector<Var>& xs);
  Var matmul(Var a, Var b);
  Var matvec(Var m, Var x);
  Var dot(Var a, Var b);
  Var concat(const std::vector<Var>& xs);
  Var slice(Var a, std::size_t offset, std::size_t len);
  Var tanh(Var a);
  Var sigmoid(Var a);
  Var hinge(Var a);
  Var log(Var a);
  // log(sigmoid(x)), stable for large |x|.
  Var log_sigmoid(Var a);
  Var softmax(Var a);  // rank-1
  Var pick(Var a, std::size_t index);
  Var sum(Var a);
  Var mean(Var a);
  // Inverted dropout: kept entries are scaled by 1/(1-rate).
  Var dropout(Var a, double rate, Rng& rng);
  Var gather_rows(Var table, std::vector<std::size_t> rows);
  // Builds the [n x (d_w + 2*d_p)] token matrix: frozen word rows
  // concatenated with two gathered position-table rows per token.
  Var token_matrix(const Tensor& word_rows, Var pos_table, std::vector<std::size_t> head_idx,
                   std::vector<std::size_t> tail_idx);
  // Valid 1-d convolution over rows: x [n x w], filters [K x (window*w)],
  // bias [K] -> [K x (n-window+1)].
  Var conv_valid(Var x, Var filters, Var bias, int window);
  // Segment maxima per filter row around the two boundary columns;
  // output is the [3K] concatenation, pre-activation. Ties give the
  // gradient to the earliest column.
  Var piecewise_max(Var levels, int p1, int p2);

  void backward(Var root);
  void clear();
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;  // allocated on demand during backward
    std::function<void()> back;
    Parameter* bound = nullptr;
    bool needs = false;
  };

  int push(Tensor value, bool needs, std::function<void()> back, Parameter* bound = nullptr);
  bool needs(Var v) const { return nodes_[v.id].needs; }
  Tensor& grad_of(int id);
  void check(Var v, const char* op) const;

  // Deque so Tensor references handed out by value() stay valid while
  // further nodes are recorded.
  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, int> param_cache_;
};

}  // namespace drex
