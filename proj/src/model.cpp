#include "ul/model.hpp"

#include <cmath>

#include "ul/container.hpp"
#include "ul/rng.hpp"

namespace ul {

void ModelConfig::validate() const {
  UL_CHECK(image_h > 0 && image_w > 0 && image_c > 0, "config", "bad image dims");
  UL_CHECK(patch_size > 0 && image_h % patch_size == 0 && image_w % patch_size == 0,
           "config", "patch grid must divide the image grid");
  UL_CHECK(d_vision > 0 && d_model > 0, "config", "bad model widths");
  UL_CHECK(n_heads > 0 && d_model % n_heads == 0 && d_vision % n_heads == 0,
           "config", "head count must divide d_model and d_vision");
  UL_CHECK(n_layers >= 1 && n_vision_layers >= 1, "config", "need at least one block");
  UL_CHECK(vocab_size >= 2, "config", "vocab too small");
  UL_CHECK(max_seq_len >= n_patches() + 2, "config", "max_seq_len too small");
}

ImageGrid ImageGrid::zeros(int h, int w, int c) {
  ImageGrid g;
  g.h = h;
  g.w = w;
  g.c = c;
  g.pix.assign(static_cast<std::size_t>(h) * w * c, 0.0);
  return g;
}

namespace {

constexpr double kInitStd = 0.08;

Tensor randn(Rng& rng, std::vector<int> shape, double std_dev) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.data) v = rng.normal() * std_dev;
  return t;
}

void add_block_params(ParamSet& ps, Rng& rng, const std::string& prefix,
                      Component comp, int d) {
  int hidden = 4 * d;
  ps.add(prefix + ".ln1.g", comp, Tensor::full({d}, 1.0));
  ps.add(prefix + ".ln1.b", comp, Tensor::zeros({d}));
  ps.add(prefix + ".attn.wq", comp, randn(rng, {d, d}, kInitStd));
  ps.add(prefix + ".attn.wk", comp, randn(rng, {d, d}, kInitStd));
  ps.add(prefix + ".attn.wv", comp, randn(rng, {d, d}, kInitStd));
  ps.add(prefix + ".attn.wo", comp, randn(rng, {d, d}, kInitStd));
  ps.add(prefix + ".ln2.g", comp, Tensor::full({d}, 1.0));
  ps.add(prefix + ".ln2.b", comp, Tensor::zeros({d}));
  ps.add(prefix + ".mlp.w1", comp, randn(rng, {hidden, d}, kInitStd));
  ps.add(prefix + ".mlp.b1", comp, Tensor::zeros({hidden}));
  ps.add(prefix + ".mlp.w2", comp, randn(rng, {d, hidden}, kInitStd));
  ps.add(prefix + ".mlp.b2", comp, Tensor::zeros({d}));
}

}  // namespace

ToyMLLM ToyMLLM::init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  ToyMLLM m;
  m.cfg = cfg;
  ParamSet& ps = m.params;

  ps.add("vision.patch_embed.w", Component::vision_encoder,
         randn(rng, {cfg.d_vision, cfg.patch_dim()}, kInitStd));
  ps.add("vision.patch_embed.b", Component::vision_encoder, Tensor::zeros({cfg.d_vision}));
  ps.add("vision.pos_embed", Component::vision_encoder,
         randn(rng, {cfg.n_patches(), cfg.d_vision}, kInitStd));
  for (int i = 0; i < cfg.n_vision_layers; ++i)
    add_block_params(ps, rng, "vision.b" + std::to_string(i),
                     Component::vision_encoder, cfg.d_vision);

  ps.add("connector.proj.w", Component::connector,
         randn(rng, {cfg.d_model, cfg.d_vision}, kInitStd));
  ps.add("connector.proj.b", Component::connector, Tensor::zeros({cfg.d_model}));

  ps.add("lm.tok_embed", Component::language_model,
         randn(rng, {cfg.vocab_size, cfg.d_model}, kInitStd));
  ps.add("lm.pos_embed", Component::language_model,
         randn(rng, {cfg.max_seq_len, cfg.d_model}, kInitStd));
  for (int i = 0; i < cfg.n_layers; ++i)
    add_block_params(ps, rng, "lm.b" + std::to_string(i),
                     Component::language_model, cfg.d_model);
  ps.add("lm.final_ln.g", Component::language_model, Tensor::full({cfg.d_model}, 1.0));
  ps.add("lm.final_ln.b", Component::language_model, Tensor::zeros({cfg.d_model}));
  ps.add("lm.head.w", Component::language_model,
         randn(rng, {cfg.vocab_size, cfg.d_model}, kInitStd));
  ps.add("lm.head.b", Component::language_model, Tensor::zeros({cfg.vocab_size}));
  return m;
}

namespace {

using NodeId = Graph::NodeId;

NodeId attention(Graph& g, const ParamSet& ps, const std::string& prefix,
                 NodeId x, int d, int n_heads, bool causal) {
  NodeId h = g.layer_norm(x, g.param(ps, prefix + ".ln1.g"), g.param(ps, prefix + ".ln1.b"));
  NodeId q = g.linear(h, g.param(ps, prefix + ".attn.wq"));
  NodeId k = g.linear(h, g.param(ps, prefix + ".attn.wk"));
  NodeId vv = g.linear(h, g.param(ps, prefix + ".attn.wv"));
  int dh = d / n_heads;
  double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<NodeId> heads;
  heads.reserve(n_heads);
  for (int hd = 0; hd < n_heads; ++hd) {
    int c0 = hd * dh, c1 = (hd + 1) * dh;
    NodeId qh = g.slice_cols(q, c0, c1);
    NodeId kh = g.slice_cols(k, c0, c1);
    NodeId vh = g.slice_cols(vv, c0, c1);
    NodeId scores = g.scale(g.matmul_nt(qh, kh), inv_sqrt);
    NodeId probs = causal ? g.softmax_causal(scores) : g.softmax_rows(scores);
    heads.push_back(g.matmul(probs, vh));
  }
  NodeId ctx = g.concat_cols(heads);
  NodeId out = g.linear(ctx, g.param(ps, prefix + ".attn.wo"));
  return g.add(x, out);
}

NodeId mlp(Graph& g, const ParamSet& ps, const std::string& prefix, NodeId x) {
  NodeId h = g.layer_norm(x, g.param(ps, prefix + ".ln2.g"), g.param(ps, prefix + ".ln2.b"));
  NodeId a = g.gelu(g.linear(h, g.param(ps, prefix + ".mlp.w1"), g.param(ps, prefix + ".mlp.b1")));
  NodeId b = g.linear(a, g.param(ps, prefix + ".mlp.w2"), g.param(ps, prefix + ".mlp.b2"));
  return g.add(x, b);
}

NodeId block(Graph& g, const ParamSet& ps, const std::string& prefix, NodeId x,
             int d, int n_heads, bool causal) {
  return mlp(g, ps, prefix, attention(g, ps, prefix, x, d, n_heads, causal));
}

Tensor patchify(const ModelConfig& cfg, const ImageGrid& img) {
  UL_CHECK(img.h == cfg.image_h && img.w == cfg.image_w && img.c == cfg.image_c,
           "contract", "image dims do not match model config");
  Tensor out = Tensor::zeros({cfg.n_patches(), cfg.patch_dim()});
  int per_row = cfg.image_w / cfg.patch_size;
  for (int p = 0; p < cfg.n_patches(); ++p) {
    int pr = (p / per_row) * cfg.patch_size;
    int pc = (p % per_row) * cfg.patch_size;
    int j = 0;
    for (int r = 0; r < cfg.patch_size; ++r)
      for (int c = 0; c < cfg.patch_size; ++c)
        for (int ch = 0; ch < cfg.image_c; ++ch)
          out.at(p, j++) = img.at(pr + r, pc + c, ch);
  }
  require_finite(out, "patchify");
  return out;
}

void check_ids(const ModelConfig& cfg, const std::vector<int>& ids, int n_visual) {
  UL_CHECK(!ids.empty(), "contract", "empty token sequence");
  UL_CHECK(n_visual + static_cast<int>(ids.size()) <= cfg.max_seq_len, "contract",
           "sequence exceeds max_seq_len");
  for (int id : ids)
    UL_CHECK(id >= 0 && id < cfg.vocab_size, "contract", "token id out of range");
}

}  // namespace

Graph::NodeId build_encoded(Graph& g, const ToyMLLM& m, const ImageGrid& img) {
  const ModelConfig& cfg = m.cfg;
  const ParamSet& ps = m.params;
  NodeId patches = g.constant(patchify(cfg, img));
  NodeId x = g.linear(patches, g.param(ps, "vision.patch_embed.w"),
                      g.param(ps, "vision.patch_embed.b"));
  x = g.add(x, g.param(ps, "vision.pos_embed"));
  for (int i = 0; i < cfg.n_vision_layers; ++i)
    x = block(g, ps, "vision.b" + std::to_string(i), x, cfg.d_vision, cfg.n_heads, false);
  return x;
}

Graph::NodeId build_visual(Graph& g, const ToyMLLM& m, const ImageGrid& img) {
  NodeId enc = build_encoded(g, m, img);
  return g.linear(enc, g.param(m.params, "connector.proj.w"),
                  g.param(m.params, "connector.proj.b"));
}

Graph::NodeId build_logits(Graph& g, const ToyMLLM& m, const ImageGrid* img,
                           const std::vector<int>& ids) {
  const ModelConfig& cfg = m.cfg;
  const ParamSet& ps = m.params;
  int n_visual = img ? cfg.n_patches() : 0;
  check_ids(cfg, ids, n_visual);

  NodeId text = g.embedding_rows(g.param(ps, "lm.tok_embed"), ids);
  NodeId x = img ? g.concat_rows(build_visual(g, m, *img), text) : text;

  int total = n_visual + static_cast<int>(ids.size());
  std::vector<int> pos_ids(total);
  for (int i = 0; i < total; ++i) pos_ids[i] = i;
  x = g.add(x, g.embedding_rows(g.param(ps, "lm.pos_embed"), pos_ids));

  for (int i = 0; i < cfg.n_layers; ++i)
    x = block(g, ps, "lm.b" + std::to_string(i), x, cfg.d_model, cfg.n_heads, true);
  x = g.layer_norm(x, g.param(ps, "lm.final_ln.g"), g.param(ps, "lm.final_ln.b"));
  return g.linear(x, g.param(ps, "lm.head.w"), g.param(ps, "lm.head.b"));
}

int pred_row(int n_visual, int text_pos) { return n_visual + text_pos - 1; }

namespace {

void check_span(const TokenSequence& seq, int n_visual) {
  int len = static_cast<int>(seq.ids.size());
  UL_CHECK(seq.answer_start < seq.answer_end, "contract", "empty answer span");
  UL_CHECK(seq.answer_start >= 1 || n_visual > 0, "contract",
           "answer span needs a predecessor position");
  UL_CHECK(seq.answer_start >= 0 && seq.answer_end <= len, "contract",
           "answer span out of range");
}

std::vector<int> span_targets(const TokenSequence& seq) {
  return {seq.ids.begin() + seq.answer_start, seq.ids.begin() + seq.answer_end};
}

}  // namespace

Graph::NodeId build_nll(Graph& g, const ToyMLLM& m, const ImageGrid* img,
                        const TokenSequence& seq) {
  int n_visual = img ? m.cfg.n_patches() : 0;
  check_span(seq, n_visual);
  NodeId logits = build_logits(g, m, img, seq.ids);
  return g.cross_entropy(logits, span_targets(seq), pred_row(n_visual, seq.answer_start));
}

Graph::NodeId build_logprob_sum(Graph& g, const ToyMLLM& m, const ImageGrid* img,
                                const TokenSequence& seq) {
  int n_visual = img ? m.cfg.n_patches() : 0;
  check_span(seq, n_visual);
  NodeId logits = build_logits(g, m, img, seq.ids);
  return g.logprob_sum(logits, span_targets(seq), pred_row(n_visual, seq.answer_start));
}

Tensor encode_image(const ToyMLLM& m, const ImageGrid& img) {
  Graph g;
  return g.value(build_encoded(g, m, img));
}

Tensor project(const ToyMLLM& m, const Tensor& encoded) {
  UL_CHECK(encoded.ndim() == 2 && encoded.cols() == m.cfg.d_vision, "contract",
           "project: input width must be d_vision");
  Graph g;
  NodeId x = g.constant(encoded);
  return g.value(g.linear(x, g.param(m.params, "connector.proj.w"),
                          g.param(m.params, "connector.proj.b")));
}

Tensor lm_logits(const ToyMLLM& m, const ImageGrid* img, const std::vector<int>& ids) {
  Graph g;
  return g.value(build_logits(g, m, img, ids));
}

double nll_loss(const ToyMLLM& m, const ImageGrid* img, const TokenSequence& seq) {
  Graph g;
  return g.value(build_nll(g, m, img, seq)).item();
}

double sequence_logprob(const ToyMLLM& m, const ImageGrid* img, const TokenSequence& seq) {
  Graph g;
  return g.value(build_logprob_sum(g, m, img, seq)).item();
}

std::vector<int> generate_greedy(const ToyMLLM& m, const ImageGrid* img,
                                 std::vector<int> prompt, int max_new, int stop_token) {
  UL_CHECK(max_new >= 0, "contract", "generate_greedy: negative max_new");
  int n_visual = img ? m.cfg.n_patches() : 0;
  for (int step = 0; step < max_new; ++step) {
    if (n_visual + static_cast<int>(prompt.size()) >= m.cfg.max_seq_len) break;
    Tensor logits = lm_logits(m, img, prompt);
    int last = logits.rows() - 1;
    int best = 0;
    double best_v = logits.at(last, 0);
    for (int j = 1; j < logits.cols(); ++j) {
      if (logits.at(last, j) > best_v) {
        best_v = logits.at(last, j);
        best = j;
      }
    }
    if (best == stop_token) break;
    prompt.push_back(best);
  }
  return prompt;
}

namespace {
constexpr char kCkptMagic[4] = {'U', 'L', 'C', 'P'};
constexpr std::uint32_t kCkptVersion = 1;
}  // namespace

void save_checkpoint(const std::string& path, const ToyMLLM& m) {
  std::string out;
  out.append(kCkptMagic, 4);
  put_u32(out, kCkptVersion);
  const ModelConfig& c = m.cfg;
  for (int v : {c.image_h, c.image_w, c.image_c, c.patch_size, c.d_vision, c.d_model,
                c.n_layers, c.n_vision_layers, c.n_heads, c.vocab_size, c.max_seq_len})
    put_u32(out, static_cast<std::uint32_t>(v));
  encode_entries(out, params_to_entries(m.params));
  write_file_bytes(path, out);
}

ToyMLLM load_checkpoint(const std::string& path) {
  std::string in = read_file_bytes(path);
  UL_CHECK(in.size() >= 4 && in.compare(0, 4, kCkptMagic, 4) == 0, "io",
           "checkpoint: bad magic in " + path);
  std::size_t off = 4;
  std::uint32_t ver = get_u32(in, off);
  UL_CHECK(ver == kCkptVersion, "io", "checkpoint: unsupported version in " + path);
  ToyMLLM m;
  int* fields[] = {&m.cfg.image_h, &m.cfg.image_w, &m.cfg.image_c, &m.cfg.patch_size,
                   &m.cfg.d_vision, &m.cfg.d_model, &m.cfg.n_layers,
                   &m.cfg.n_vision_layers, &m.cfg.n_heads, &m.cfg.vocab_size,
                   &m.cfg.max_seq_len};
  for (int* f : fields) *f = static_cast<int>(get_u32(in, off));
  m.cfg.validate();
  m.params = entries_to_params(decode_entries(in, off));
  UL_CHECK(off == in.size(), "io", "checkpoint: trailing bytes in " + path);
  return m;
}

}  // namespace ul
