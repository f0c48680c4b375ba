#pragma once

namespace tender {

__extension__ typedef __int128 int128;

} // namespace tender
