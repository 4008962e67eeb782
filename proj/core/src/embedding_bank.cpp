#include "vmae/errors.hpp"
#include "vmae/semantic_prior.hpp"

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_set>

namespace vmae {

namespace {

constexpr std::string_view kMagic = "VMAE-EMB";
constexpr std::string_view kVersion = "v1";

bool is_binary(const std::filesystem::path& path) { return path.extension() == ".bin"; }

struct Header {
  int rows = 0;
  int dim = 0;
};

Header parse_header(const std::string& line, const std::filesystem::path& path) {
  std::istringstream is(line);
  std::string magic, version;
  long long rows = -1, dim = -1;
  std::string extra;
  if (!(is >> magic >> version >> rows >> dim) || (is >> extra) || magic != kMagic ||
      version != kVersion || rows < 0 || dim < 1) {
    throw ParseError(path.string() + ": malformed header '" + line +
                     "' (expected 'VMAE-EMB v1 <M> <sem_dim>')");
  }
  return {static_cast<int>(rows), static_cast<int>(dim)};
}

std::string record_label(std::size_t record, const std::string& id) {
  return "record " + std::to_string(record + 1) + (id.empty() ? "" : " ('" + id + "')");
}

void check_duplicate(std::unordered_set<std::string>& seen, const std::string& id,
                     std::size_t record, const std::filesystem::path& path) {
  if (!seen.insert(id).second) {
    throw ParseError(path.string() + ": " + record_label(record, id) + " duplicates an earlier id");
  }
}

std::uint32_t read_u32_le(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw ParseError("truncated");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_u32_le(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

TextEmbeddingBank load_text(std::istream& in, const Header& h, const std::filesystem::path& path) {
  TextEmbeddingBank bank;
  bank.vectors.resize(h.rows, h.dim);
  std::unordered_set<std::string> seen;
  std::string line;
  for (std::size_t r = 0; r < static_cast<std::size_t>(h.rows); ++r) {
    if (!std::getline(in, line)) {
      throw ParseError(path.string() + ": expected " + std::to_string(h.rows) +
                       " records, found " + std::to_string(r));
    }
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw ParseError(path.string() + ": " + record_label(r, "") + " has no tab separator");
    }
    std::string id = line.substr(0, tab);
    check_duplicate(seen, id, r, path);
    const char* p = line.data() + tab + 1;
    const char* end = line.data() + line.size();
    int k = 0;
    while (p < end) {
      double v = 0.0;
      auto [next, ec] = std::from_chars(p, end, v);
      if (ec != std::errc() || k >= h.dim) {
        throw ParseError(path.string() + ": " + record_label(r, id) + " dimension mismatch or bad number");
      }
      bank.vectors(static_cast<Index>(r), k++) = v;
      p = next;
      if (p < end) {
        if (*p != ',') throw ParseError(path.string() + ": " + record_label(r, id) + " bad separator");
        ++p;
      }
    }
    if (k != h.dim) {
      throw ParseError(path.string() + ": " + record_label(r, id) + " has " + std::to_string(k) +
                       " values, header declares " + std::to_string(h.dim));
    }
    bank.ids.push_back(std::move(id));
  }
  if (std::getline(in, line) && !line.empty()) {
    throw ParseError(path.string() + ": more records than the header declares");
  }
  return bank;
}

TextEmbeddingBank load_binary(std::istream& in, const Header& h, const std::filesystem::path& path) {
  static_assert(std::endian::native == std::endian::little, "binary banks assume a little-endian host");
  TextEmbeddingBank bank;
  bank.vectors.resize(h.rows, h.dim);
  std::unordered_set<std::string> seen;
  std::vector<float> buf(static_cast<std::size_t>(h.dim));
  for (std::size_t r = 0; r < static_cast<std::size_t>(h.rows); ++r) {
    std::string id;
    try {
      const std::uint32_t len = read_u32_le(in);
      id.resize(len);
      if (!in.read(id.data(), len)) throw ParseError("truncated");
    } catch (const ParseError&) {
      throw ParseError(path.string() + ": " + record_label(r, "") + " truncated id");
    }
    check_duplicate(seen, id, r, path);
    if (!in.read(reinterpret_cast<char*>(buf.data()),
                 static_cast<std::streamsize>(buf.size() * sizeof(float)))) {
      throw ParseError(path.string() + ": " + record_label(r, id) + " truncated vector");
    }
    for (int k = 0; k < h.dim; ++k) bank.vectors(static_cast<Index>(r), k) = buf[static_cast<std::size_t>(k)];
    bank.ids.push_back(std::move(id));
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw ParseError(path.string() + ": trailing bytes after the declared records");
  }
  return bank;
}

}  // namespace

TextEmbeddingBank load_embedding_bank(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open embedding bank " + path.string());
  std::string header;
  if (!std::getline(in, header)) throw ParseError(path.string() + ": empty file");
  const Header h = parse_header(header, path);
  TextEmbeddingBank bank = is_binary(path) ? load_binary(in, h, path) : load_text(in, h, path);
  bank.rebuild_index();
  return bank;
}

void save_embedding_bank(const TextEmbeddingBank& bank, const std::filesystem::path& path) {
  if (static_cast<Index>(bank.ids.size()) != bank.vectors.rows()) {
    throw StructuralError("bank ids and vectors disagree in length");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write embedding bank " + path.string());
  out << kMagic << ' ' << kVersion << ' ' << bank.ids.size() << ' ' << bank.vectors.cols() << '\n';
  if (is_binary(path)) {
    for (std::size_t r = 0; r < bank.ids.size(); ++r) {
      write_u32_le(out, static_cast<std::uint32_t>(bank.ids[r].size()));
      out.write(bank.ids[r].data(), static_cast<std::streamsize>(bank.ids[r].size()));
      for (Index k = 0; k < bank.vectors.cols(); ++k) {
        const float f = static_cast<float>(bank.vectors(static_cast<Index>(r), k));
        out.write(reinterpret_cast<const char*>(&f), sizeof f);
      }
    }
  } else {
    char buf[40];
    for (std::size_t r = 0; r < bank.ids.size(); ++r) {
      if (bank.ids[r].find_first_of("\t\n") != std::string::npos) {
        throw InputError("bank id '" + bank.ids[r] + "' contains a tab or newline");
      }
      out << bank.ids[r] << '\t';
      for (Index k = 0; k < bank.vectors.cols(); ++k) {
        auto [end, ec] = std::to_chars(buf, buf + sizeof buf, bank.vectors(static_cast<Index>(r), k),
                                     std::chars_format::general, 17);
        if (k > 0) out << ',';
        out.write(buf, end - buf);
      }
      out << '\n';
    }
  }
  if (!out) throw IoError("failed writing embedding bank " + path.string());
}

}  // namespace vmae
