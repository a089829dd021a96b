#include "gest/motion_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "gest/error.hpp"

namespace gest {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;
constexpr double kRadToDeg = 180.0 / std::numbers::pi;

bool is_rotation(ChannelKind c) {
  return c == ChannelKind::Xrotation || c == ChannelKind::Yrotation || c == ChannelKind::Zrotation;
}

std::optional<ChannelKind> channel_from_name(std::string_view name) {
  if (name == "Xposition") return ChannelKind::Xposition;
  if (name == "Yposition") return ChannelKind::Yposition;
  if (name == "Zposition") return ChannelKind::Zposition;
  if (name == "Xrotation") return ChannelKind::Xrotation;
  if (name == "Yrotation") return ChannelKind::Yrotation;
  if (name == "Zrotation") return ChannelKind::Zrotation;
  return std::nullopt;
}

const char* channel_name(ChannelKind c) {
  switch (c) {
    case ChannelKind::Xposition: return "Xposition";
    case ChannelKind::Yposition: return "Yposition";
    case ChannelKind::Zposition: return "Zposition";
    case ChannelKind::Xrotation: return "Xrotation";
    case ChannelKind::Yrotation: return "Yrotation";
    case ChannelKind::Zrotation: return "Zrotation";
  }
  return "";
}

int channel_axis(ChannelKind c) {
  switch (c) {
    case ChannelKind::Xposition:
    case ChannelKind::Xrotation: return 0;
    case ChannelKind::Yposition:
    case ChannelKind::Yrotation: return 1;
    case ChannelKind::Zposition:
    case ChannelKind::Zrotation: return 2;
  }
  return 0;
}

Vec3 axis_vector(Axis a) { return Vec3::Unit(static_cast<int>(a)); }

struct Token {
  std::string_view text;
  int line;
};

// Splits on whitespace and treats braces as standalone tokens.
class Lexer {
 public:
  explicit Lexer(std::string_view text) : text_(text) {}

  std::optional<Token> next() {
    skip_space();
    if (pos_ >= text_.size()) return std::nullopt;
    const std::size_t start = pos_;
    if (text_[pos_] == '{' || text_[pos_] == '}') {
      ++pos_;
      return Token{text_.substr(start, 1), line_};
    }
    while (pos_ < text_.size() && !is_space(text_[pos_]) && text_[pos_] != '{' && text_[pos_] != '}') ++pos_;
    return Token{text_.substr(start, pos_ - start), line_};
  }

  Token expect_any(const char* what) {
    auto t = next();
    if (!t) throw ParseError(line_, std::string("unexpected end of file, expected ") + what);
    return *t;
  }

  void expect(std::string_view word) {
    Token t = expect_any(std::string(word).c_str());
    if (t.text != word) {
      throw ParseError(t.line, "expected '" + std::string(word) + "', found '" + std::string(t.text) + "'");
    }
  }

  int line() const { return line_; }
  std::size_t position() const { return pos_; }

 private:
  static bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }

  void skip_space() {
    while (pos_ < text_.size() && is_space(text_[pos_])) {
      if (text_[pos_] == '\n') ++line_;
      ++pos_;
    }
  }

  std::string_view text_;
  std::size_t pos_ = 0;
  int line_ = 1;
};

double to_double(const Token& t) {
  double v = 0.0;
  const char* first = t.text.data();
  const char* last = first + t.text.size();
  if (!t.text.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) {
    throw ParseError(t.line, "invalid number '" + std::string(t.text) + "'");
  }
  return v;
}

long to_long(const Token& t) {
  long v = 0;
  auto [ptr, ec] = std::from_chars(t.text.data(), t.text.data() + t.text.size(), v);
  if (ec != std::errc() || ptr != t.text.data() + t.text.size()) {
    throw ParseError(t.line, "invalid integer '" + std::string(t.text) + "'");
  }
  return v;
}

void validate_channels(const std::vector<ChannelKind>& channels, int line) {
  if (channels.size() != 3 && channels.size() != 6) {
    throw ParseError(line, "unsupported channel set: " + std::to_string(channels.size()) + " channels");
  }
  std::array<int, 3> rot{}, pos{};
  for (auto c : channels) (is_rotation(c) ? rot : pos)[channel_axis(c)]++;
  const bool rot_ok = rot == std::array<int, 3>{1, 1, 1};
  const bool pos_ok = channels.size() == 3 ? pos == std::array<int, 3>{0, 0, 0} : pos == std::array<int, 3>{1, 1, 1};
  if (!rot_ok || !pos_ok) throw ParseError(line, "unsupported channel set");
}

class HierarchyParser {
 public:
  explicit HierarchyParser(Lexer& lex) : lex_(lex) {}

  std::vector<Joint> parse() {
    lex_.expect("HIERARCHY");
    lex_.expect("ROOT");
    parse_joint(std::nullopt, false);
    return std::move(joints_);
  }

 private:
  void parse_offset(Joint& j) {
    lex_.expect("OFFSET");
    for (int k = 0; k < 3; ++k) j.offset[k] = to_double(lex_.expect_any("offset value"));
  }

  void parse_joint(std::optional<int> parent, bool end_site) {
    Joint joint;
    joint.parent = parent;
    joint.end_site = end_site;
    if (end_site) {
      lex_.expect("Site");
      joint.name = joints_[*parent].name + "_End";
      while (std::any_of(joints_.begin(), joints_.end(), [&](const Joint& o) { return o.name == joint.name; })) {
        joint.name += "_";
      }
    } else {
      Token name = lex_.expect_any("joint name");
      joint.name = std::string(name.text);
      for (const auto& o : joints_) {
        if (o.name == joint.name) throw ParseError(name.line, "duplicate joint name '" + joint.name + "'");
      }
    }
    lex_.expect("{");
    parse_offset(joint);
    const int index = static_cast<int>(joints_.size());
    if (!end_site) {
      lex_.expect("CHANNELS");
      Token count_tok = lex_.expect_any("channel count");
      const long count = to_long(count_tok);
      if (count < 0 || count > 64) throw ParseError(count_tok.line, "bad channel count");
      for (long c = 0; c < count; ++c) {
        Token ch = lex_.expect_any("channel name");
        auto kind = channel_from_name(ch.text);
        if (!kind) throw ParseError(ch.line, "unknown channel '" + std::string(ch.text) + "'");
        joint.channels.push_back(*kind);
      }
      validate_channels(joint.channels, count_tok.line);
    }
    joints_.push_back(std::move(joint));
    while (true) {
      Token t = lex_.expect_any("'}'");
      if (t.text == "}") break;
      if (end_site) throw ParseError(t.line, "unexpected token in End Site: '" + std::string(t.text) + "'");
      if (t.text == "JOINT") {
        parse_joint(index, false);
      } else if (t.text == "End") {
        parse_joint(index, true);
      } else {
        throw ParseError(t.line, "unexpected token '" + std::string(t.text) + "'");
      }
    }
  }

  Lexer& lex_;
  std::vector<Joint> joints_;
};

std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  std::string s(buf);
  if (s == "-0.000000") s = "0.000000";
  return s;
}

}  // namespace

bool Joint::has_rotation() const {
  return std::any_of(channels.begin(), channels.end(), is_rotation);
}

bool Joint::has_position() const {
  return std::any_of(channels.begin(), channels.end(), [](ChannelKind c) { return !is_rotation(c); });
}

std::array<Axis, 3> Joint::rotation_order() const {
  std::array<Axis, 3> order{Axis::Z, Axis::X, Axis::Y};
  int k = 0;
  for (auto c : channels) {
    if (is_rotation(c) && k < 3) order[k++] = static_cast<Axis>(channel_axis(c));
  }
  return order;
}

Skeleton::Skeleton(std::vector<Joint> joints) : joints_(std::move(joints)) { validate(); }

std::optional<int> Skeleton::find(std::string_view name) const {
  for (std::size_t i = 0; i < joints_.size(); ++i) {
    if (joints_[i].name == name) return static_cast<int>(i);
  }
  return std::nullopt;
}

void Skeleton::validate() const {
  require(!joints_.empty(), "invalid_argument", "skeleton has no joints");
  std::set<std::string> names;
  int roots = 0;
  for (std::size_t i = 0; i < joints_.size(); ++i) {
    const auto& j = joints_[i];
    if (!j.parent) {
      ++roots;
    } else {
      require(*j.parent >= 0 && static_cast<std::size_t>(*j.parent) < i, "invalid_argument",
              "joint '" + j.name + "' is not in topological order");
    }
    require(names.insert(j.name).second, "invalid_argument", "duplicate joint name '" + j.name + "'");
  }
  require(roots == 1 && !joints_[0].parent, "invalid_argument", "skeleton must have exactly one root at index 0");
}

void MotionClip::validate() const {
  skeleton.validate();
  require(fps > 0.0 && std::isfinite(fps), "invalid_argument", "fps must be positive");
  require(!frames.empty(), "invalid_argument", "clip has no frames");
  for (const auto& f : frames) {
    require(f.rotations.size() == skeleton.size() && f.translations.size() == skeleton.size(), "invalid_argument",
            "frame does not match skeleton joint count");
    for (const auto& q : f.rotations) {
      require(std::abs(q.norm() - 1.0) < 1e-6, "invalid_argument", "non-unit quaternion in clip");
    }
  }
}

Frame rest_frame(const Skeleton& skeleton) {
  Frame f;
  f.rotations.assign(skeleton.size(), Quat::Identity());
  f.translations.reserve(skeleton.size());
  for (const auto& j : skeleton.joints()) f.translations.push_back(j.offset);
  return f;
}

Quat euler_to_quat(const std::array<double, 3>& degrees, const std::array<Axis, 3>& order) {
  Quat q = Quat::Identity();
  for (int k = 0; k < 3; ++k) {
    q = q * Quat(Eigen::AngleAxisd(degrees[k] * kDegToRad, axis_vector(order[k])));
  }
  return q.normalized();
}

std::array<double, 3> quat_to_euler(const Quat& q, const std::array<Axis, 3>& order) {
  const int i = static_cast<int>(order[0]);
  const int j = static_cast<int>(order[1]);
  const int k = static_cast<int>(order[2]);
  const bool even = (j == (i + 1) % 3);
  const double s = even ? 1.0 : -1.0;
  const Mat3 r = q.normalized().toRotationMatrix();

  const double b = std::asin(std::clamp(s * r(i, k), -1.0, 1.0));
  double a = 0.0;
  double c = 0.0;
  if (std::abs(std::cos(b)) > 1e-9) {
    a = std::atan2(-s * r(j, k), r(k, k));
    c = std::atan2(-s * r(i, j), r(i, i));
  } else {
    // Gimbal lock: fold everything into the first angle.
    const Mat3 m = r * Eigen::AngleAxisd(b, axis_vector(order[1])).toRotationMatrix().transpose();
    const int jj = (i + 1) % 3;
    const int kk = (i + 2) % 3;
    a = std::atan2(m(kk, jj), m(jj, jj));
  }
  return {a * kRadToDeg, b * kRadToDeg, c * kRadToDeg};
}

MotionClip parse_bvh(std::string_view text) {
  Lexer lex(text);
  std::vector<Joint> joints = HierarchyParser(lex).parse();

  lex.expect("MOTION");
  lex.expect("Frames:");
  Token frames_tok = lex.expect_any("frame count");
  const long declared = to_long(frames_tok);
  if (declared < 1) throw ParseError(frames_tok.line, "frame count must be at least 1");
  lex.expect("Frame");
  lex.expect("Time:");
  Token time_tok = lex.expect_any("frame time");
  const double frame_time = to_double(time_tok);
  if (!(frame_time > 0.0)) throw ParseError(time_tok.line, "frame time must be positive");

  std::size_t channel_total = 0;
  for (const auto& j : joints) channel_total += j.channels.size();

  Skeleton skeleton(std::move(joints));
  MotionClip clip;
  clip.fps = 1.0 / frame_time;

  // Data rows: one frame per non-empty line.
  std::size_t pos = lex.position();
  int line = lex.line();
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view row = text.substr(pos, eol - pos);
    Lexer row_lex(row);
    std::vector<double> values;
    values.reserve(channel_total);
    while (auto t = row_lex.next()) values.push_back(to_double(Token{t->text, line}));
    if (!values.empty()) {
      if (values.size() != channel_total) {
        throw ParseError(line, "expected " + std::to_string(channel_total) + " channel values, found " +
                                   std::to_string(values.size()));
      }
      if (static_cast<long>(clip.frames.size()) >= declared) {
        throw ParseError(line, "frame count mismatch: header declares " + std::to_string(declared) +
                                   " frames but more data rows follow");
      }
      Frame frame = rest_frame(skeleton);
      std::size_t v = 0;
      for (std::size_t ji = 0; ji < skeleton.size(); ++ji) {
        const Joint& joint = skeleton[ji];
        std::array<double, 3> angles{};
        int r = 0;
        for (auto c : joint.channels) {
          if (is_rotation(c)) {
            angles[r++] = values[v++];
          } else {
            frame.translations[ji][channel_axis(c)] = values[v++];
          }
        }
        if (r == 3) frame.rotations[ji] = euler_to_quat(angles, joint.rotation_order());
      }
      clip.frames.push_back(std::move(frame));
    }
    pos = eol + 1;
    ++line;
  }
  if (static_cast<long>(clip.frames.size()) != declared) {
    throw ParseError(line, "frame count mismatch: header declares " + std::to_string(declared) + " frames, found " +
                               std::to_string(clip.frames.size()));
  }
  clip.skeleton = std::move(skeleton);
  return clip;
}

std::string write_bvh(const MotionClip& clip) {
  clip.validate();
  const auto& joints = clip.skeleton.joints();
  std::vector<std::vector<int>> children(joints.size());
  for (std::size_t i = 1; i < joints.size(); ++i) children[*joints[i].parent].push_back(static_cast<int>(i));

  std::ostringstream out;
  out << "HIERARCHY\n";
  auto emit = [&](auto&& self, int index, int depth) -> void {
    const Joint& j = joints[index];
    const std::string indent(depth, '\t');
    if (j.end_site) {
      out << indent << "End Site\n";
    } else {
      out << indent << (j.parent ? "JOINT " : "ROOT ") << j.name << "\n";
    }
    out << indent << "{\n";
    out << indent << "\tOFFSET " << fmt6(j.offset.x()) << " " << fmt6(j.offset.y()) << " " << fmt6(j.offset.z())
        << "\n";
    if (!j.end_site) {
      out << indent << "\tCHANNELS " << j.channels.size();
      for (auto c : j.channels) out << " " << channel_name(c);
      out << "\n";
    }
    for (int c : children[index]) self(self, c, depth + 1);
    out << indent << "}\n";
  };
  emit(emit, 0, 0);

  out << "MOTION\n";
  out << "Frames: " << clip.frames.size() << "\n";
  out << "Frame Time: " << fmt6(1.0 / clip.fps) << "\n";
  for (const auto& frame : clip.frames) {
    bool first = true;
    for (std::size_t ji = 0; ji < joints.size(); ++ji) {
      const Joint& joint = joints[ji];
      if (joint.channels.empty()) continue;
      const auto angles = quat_to_euler(frame.rotations[ji], joint.rotation_order());
      int r = 0;
      for (auto c : joint.channels) {
        const double v = is_rotation(c) ? angles[r++] : frame.translations[ji][channel_axis(c)];
        if (!first) out << ' ';
        out << fmt6(v);
        first = false;
      }
    }
    out << "\n";
  }
  return out.str();
}

MotionClip resample(const MotionClip& clip, double target_fps) {
  require(target_fps > 0.0 && std::isfinite(target_fps), "invalid_argument", "target fps must be positive");
  clip.validate();
  if (target_fps == clip.fps) return clip;

  const std::size_t n_in = clip.frames.size();
  const std::size_t n_out = static_cast<std::size_t>(std::lround(clip.duration() * target_fps)) + 1;
  MotionClip out;
  out.skeleton = clip.skeleton;
  out.fps = target_fps;
  out.frames.reserve(n_out);
  for (std::size_t i = 0; i < n_out; ++i) {
    const double u = std::min(static_cast<double>(i) * clip.fps / target_fps, static_cast<double>(n_in - 1));
    const std::size_t i0 = static_cast<std::size_t>(std::floor(u));
    const std::size_t i1 = std::min(i0 + 1, n_in - 1);
    const double alpha = u - static_cast<double>(i0);
    const Frame& a = clip.frames[i0];
    const Frame& b = clip.frames[i1];
    Frame f;
    f.translations.resize(a.translations.size());
    f.rotations.resize(a.rotations.size());
    for (std::size_t j = 0; j < a.rotations.size(); ++j) {
      f.translations[j] = alpha == 0.0 ? a.translations[j] : ((1.0 - alpha) * a.translations[j] + alpha * b.translations[j]).eval();
      f.rotations[j] = alpha == 0.0 ? a.rotations[j] : a.rotations[j].slerp(alpha, b.rotations[j]).normalized();
    }
    out.frames.push_back(std::move(f));
  }
  return out;
}

MotionClip read_bvh_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("io", "cannot open BVH file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_bvh(buf.str());
}

void write_bvh_file(const std::string& path, const MotionClip& clip) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("io", "cannot write BVH file '" + path + "'");
  out << write_bvh(clip);
}

std::vector<Vec3> forward_kinematics(const Skeleton& skeleton, const Frame& frame) {
  const std::size_t n = skeleton.size();
  std::vector<Vec3> pos(n);
  std::vector<Quat> rot(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Joint& j = skeleton[i];
    if (!j.parent) {
      pos[i] = frame.translations[i];
      rot[i] = frame.rotations[i];
    } else {
      const int p = *j.parent;
      pos[i] = pos[p] + rot[p] * frame.translations[i];
      rot[i] = rot[p] * frame.rotations[i];
    }
  }
  return pos;
}

}  // namespace gest
