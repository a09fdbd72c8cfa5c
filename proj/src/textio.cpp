#include "stf/textio.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace stf {

void write_tensor_text(std::ostream& os, const Tensor& t) {
  for (std::size_t i = 0; i < t.rank(); ++i) os << (i ? " " : "") << t.dim(i);
  os << '\n';
  char buf[40];
  for (double v : t.data()) {
    std::snprintf(buf, sizeof(buf), "%.17g\n", v);
    os << buf;
  }
}

void write_tensor_text(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write tensor file: " + path.string());
  write_tensor_text(os, t);
}

Tensor read_tensor_text(std::istream& is) {
  std::string header;
  if (!std::getline(is, header)) throw std::runtime_error("empty tensor file");
  std::istringstream hs(header);
  Shape shape;
  std::size_t d;
  while (hs >> d) shape.push_back(d);
  std::vector<double> data(shape_numel(shape));
  for (double& v : data) {
    std::string tok;
    if (!(is >> tok)) throw std::runtime_error("tensor file truncated");
    v = std::stod(tok);
  }
  return Tensor(std::move(shape), std::move(data));
}

Tensor read_tensor_text(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read tensor file: " + path.string());
  return read_tensor_text(is);
}

}  // namespace stf
